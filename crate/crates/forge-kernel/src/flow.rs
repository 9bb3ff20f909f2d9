//! Linear-path flow matching: interpolation between a noise trajectory and
//! a ground-truth trajectory, and the squared-residual velocity loss.

use crate::graph::{Graph, NodeId, NodeMat};
use crate::tensor::Tensor2;
use crate::{KernelError, Scalar};

/// `(1 - t) * a0 + t * a1`, elementwise. The endpoints return exact copies
/// of the corresponding input so no rounding is introduced at t = 0 or 1.
pub fn flow_interpolate<S: Scalar>(
    a0: &Tensor2<S>,
    a1: &Tensor2<S>,
    t: S,
) -> Result<Tensor2<S>, KernelError> {
    if a0.shape() != a1.shape() {
        return Err(KernelError::ShapeMismatch {
            op: "flow_interpolate",
            left_rows: a0.rows(),
            left_cols: a0.cols(),
            right_rows: a1.rows(),
            right_cols: a1.cols(),
        });
    }
    if t < S::zero() || t > S::one() {
        return Err(KernelError::TimeOutOfRange {
            t: t.to_f64().unwrap_or(f64::NAN),
        });
    }
    if t == S::zero() {
        return Ok(a0.clone());
    }
    if t == S::one() {
        return Ok(a1.clone());
    }
    let one_minus_t = S::one() - t;
    a0.scale(one_minus_t)?.add(&a1.scale(t)?)
}

/// Mean squared residual of a predicted velocity field against the constant
/// target `a1 - a0`. Zero exactly when the prediction equals the target.
pub fn fm_loss<S: Scalar>(
    pred: &Tensor2<S>,
    a0: &Tensor2<S>,
    a1: &Tensor2<S>,
) -> Result<S, KernelError> {
    if pred.shape() != a0.shape() || a0.shape() != a1.shape() {
        return Err(KernelError::ShapeMismatch {
            op: "fm_loss",
            left_rows: pred.rows(),
            left_cols: pred.cols(),
            right_rows: a1.rows(),
            right_cols: a1.cols(),
        });
    }
    let mut acc = S::zero();
    for i in 0..pred.rows() {
        for j in 0..pred.cols() {
            let r = pred.get(i, j) - (a1.get(i, j) - a0.get(i, j));
            acc = acc + r * r;
        }
    }
    let n = S::from_usize(pred.rows() * pred.cols()).unwrap();
    Ok(acc / n)
}

impl<S: Scalar> Graph<S> {
    /// Tape version of [`fm_loss`] for a predicted velocity on the tape and
    /// constant endpoint trajectories, accumulating in the same row-major
    /// order as the tensor version.
    pub fn mat_fm_loss(
        &mut self,
        pred: &NodeMat,
        a0: &Tensor2<S>,
        a1: &Tensor2<S>,
    ) -> Result<NodeId, KernelError> {
        if pred.shape() != a0.shape() || a0.shape() != a1.shape() {
            return Err(KernelError::ShapeMismatch {
                op: "mat_fm_loss",
                left_rows: pred.rows(),
                left_cols: pred.cols(),
                right_rows: a1.rows(),
                right_cols: a1.cols(),
            });
        }
        let mut acc: Option<NodeId> = None;
        for i in 0..pred.rows() {
            for j in 0..pred.cols() {
                let target = self.constant(a1.get(i, j) - a0.get(i, j));
                let r = self.sub(pred.id(i, j), target);
                let sq = self.mul(r, r);
                acc = Some(match acc {
                    None => sq,
                    Some(a) => self.add(a, sq),
                });
            }
        }
        let n = S::from_usize(pred.rows() * pred.cols()).unwrap();
        Ok(self.scale(acc.expect("tensors are non-empty"), S::one() / n))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: usize, cols: usize, data: &[f64]) -> Tensor2<f64> {
        Tensor2::new(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn endpoints_are_exact_copies() {
        let a0 = t2(2, 2, &[0.1, -0.2, 0.3, 0.7]);
        let a1 = t2(2, 2, &[1.0, 2.0, -3.0, 0.5]);
        assert_eq!(flow_interpolate(&a0, &a1, 0.0).unwrap(), a0);
        assert_eq!(flow_interpolate(&a0, &a1, 1.0).unwrap(), a1);
    }

    #[test]
    fn midpoint_of_zero_and_two_is_one() {
        let a0 = t2(1, 1, &[0.0]);
        let a1 = t2(1, 1, &[2.0]);
        let mid = flow_interpolate(&a0, &a1, 0.5).unwrap();
        assert_eq!(mid.get(0, 0), 1.0);
    }

    #[test]
    fn displacement_is_linear_in_t() {
        let a0 = t2(2, 3, &[0.4, -1.1, 0.9, 2.2, -0.6, 0.05]);
        let a1 = t2(2, 3, &[-0.3, 0.8, 1.5, -2.0, 0.1, 0.9]);
        for &t in &[0.125, 0.3, 0.5, 0.77, 0.99] {
            let at = flow_interpolate(&a0, &a1, t).unwrap();
            for i in 0..2 {
                for j in 0..3 {
                    let lhs = at.get(i, j) - a0.get(i, j);
                    let rhs = t * (a1.get(i, j) - a0.get(i, j));
                    assert!((lhs - rhs).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn out_of_range_time_is_rejected() {
        let a = t2(1, 1, &[0.0]);
        assert_eq!(
            flow_interpolate(&a, &a, 1.5),
            Err(KernelError::TimeOutOfRange { t: 1.5 })
        );
        assert_eq!(
            flow_interpolate(&a, &a, -0.1),
            Err(KernelError::TimeOutOfRange { t: -0.1 })
        );
    }

    #[test]
    fn perfect_predictor_has_zero_loss() {
        let a0 = t2(2, 2, &[0.5, -0.5, 1.0, 2.0]);
        let a1 = t2(2, 2, &[1.5, 0.5, -1.0, 0.0]);
        let pred = a1.sub(&a0).unwrap();
        assert_eq!(fm_loss(&pred, &a0, &a1).unwrap(), 0.0);
    }

    #[test]
    fn zero_predictor_against_unit_displacement() {
        let a0 = t2(1, 2, &[0.0, 0.0]);
        let a1 = t2(1, 2, &[2.0, 0.0]);
        let pred = t2(1, 2, &[0.0, 0.0]);
        assert_eq!(fm_loss(&pred, &a0, &a1).unwrap(), 2.0);
    }

    #[test]
    fn loss_is_quadratic_in_residual_scale() {
        let a0 = t2(2, 2, &[0.1, 0.2, 0.3, 0.4]);
        let a1 = t2(2, 2, &[1.0, -1.0, 0.5, 0.25]);
        let target = a1.sub(&a0).unwrap();
        let resid = t2(2, 2, &[0.3, -0.7, 0.2, 0.9]);
        let base = fm_loss(&target.add(&resid).unwrap(), &a0, &a1).unwrap();
        let scaled = fm_loss(&target.add(&resid.scale(3.0).unwrap()).unwrap(), &a0, &a1).unwrap();
        assert!((scaled - 9.0 * base).abs() < 1e-12 * scaled.abs().max(1.0));
    }

    #[test]
    fn loss_zero_only_for_exact_target() {
        let a0 = t2(1, 2, &[0.0, 1.0]);
        let a1 = t2(1, 2, &[1.0, 3.0]);
        let mut pred = a1.sub(&a0).unwrap();
        assert_eq!(fm_loss(&pred, &a0, &a1).unwrap(), 0.0);
        pred.set(0, 1, pred.get(0, 1) + 1e-9);
        assert!(fm_loss(&pred, &a0, &a1).unwrap() > 0.0);
    }

    #[test]
    fn tape_loss_matches_tensor_loss_and_gradients() {
        let a0 = t2(1, 3, &[0.2, -0.4, 0.6]);
        let a1 = t2(1, 3, &[1.0, 0.5, -0.5]);
        let pred0 = t2(1, 3, &[0.9, 0.1, -0.7]);

        let mut g = Graph::<f64>::new();
        let np = g.mat_input(&pred0);
        let loss = g.mat_fm_loss(&np, &a0, &a1).unwrap();
        assert_eq!(g.value(loss), fm_loss(&pred0, &a0, &a1).unwrap());

        // d loss / d pred_ij = 2 (pred_ij - target_ij) / n
        let grads = g.backward(loss);
        for j in 0..3 {
            let target = a1.get(0, j) - a0.get(0, j);
            let expect = 2.0 * (pred0.get(0, j) - target) / 3.0;
            assert!((grads.wrt(np.id(0, j)) - expect).abs() < 1e-14);
        }
    }
}
