//! Single-head scaled dot-product attention with boolean visibility masks.
//!
//! Masked keys receive an exact weight of 0.0 rather than a large negative
//! bias: the softmax normalizes over the allowed keys only. A query row
//! whose every key is masked is an error, not a NaN. The tensor path and
//! the tape path perform the same operations in the same order.

use crate::graph::{Graph, NodeMat};
use crate::tensor::{AttnMask, Tensor2};
use crate::{KernelError, Scalar};

fn check_shapes<S: Scalar>(
    q: &Tensor2<S>,
    k: &Tensor2<S>,
    v: &Tensor2<S>,
    mask: &AttnMask,
) -> Result<(), KernelError> {
    if q.cols() != k.cols() {
        return Err(KernelError::ShapeMismatch {
            op: "attention q/k",
            left_rows: q.rows(),
            left_cols: q.cols(),
            right_rows: k.rows(),
            right_cols: k.cols(),
        });
    }
    if v.rows() != k.rows() {
        return Err(KernelError::ShapeMismatch {
            op: "attention k/v",
            left_rows: k.rows(),
            left_cols: k.cols(),
            right_rows: v.rows(),
            right_cols: v.cols(),
        });
    }
    if mask.rows() != q.rows() || mask.cols() != k.rows() {
        return Err(KernelError::ShapeMismatch {
            op: "attention mask",
            left_rows: q.rows(),
            left_cols: k.rows(),
            right_rows: mask.rows(),
            right_cols: mask.cols(),
        });
    }
    for row in 0..q.rows() {
        if !mask.row_has_any(row) {
            return Err(KernelError::AllKeysMasked { row });
        }
    }
    Ok(())
}

/// Post-softmax weights, shape `(q.rows, k.rows)`. Masked cells are exactly
/// zero; each row sums to one over its allowed keys.
pub fn attention_weights<S: Scalar>(
    q: &Tensor2<S>,
    k: &Tensor2<S>,
    v: &Tensor2<S>,
    mask: &AttnMask,
) -> Result<Tensor2<S>, KernelError> {
    check_shapes(q, k, v, mask)?;
    let inv_sqrt_d = S::one() / S::from_usize(q.cols()).unwrap().sqrt();
    let mut weights = Tensor2::zeros(q.rows(), k.rows())?;
    for r in 0..q.rows() {
        let mut scores = vec![S::zero(); k.rows()];
        for c in 0..k.rows() {
            if !mask.allowed(r, c) {
                continue;
            }
            let mut acc = S::zero();
            for d in 0..q.cols() {
                acc = acc + q.get(r, d) * k.get(c, d);
            }
            scores[c] = acc * inv_sqrt_d;
        }
        let mut max = S::neg_infinity();
        for c in 0..k.rows() {
            if mask.allowed(r, c) && scores[c] > max {
                max = scores[c];
            }
        }
        let mut total = S::zero();
        let mut exps = vec![S::zero(); k.rows()];
        for c in 0..k.rows() {
            if mask.allowed(r, c) {
                exps[c] = (scores[c] - max).exp();
                total = total + exps[c];
            }
        }
        for c in 0..k.rows() {
            if mask.allowed(r, c) {
                weights.set(r, c, exps[c] / total);
            }
        }
    }
    Ok(weights)
}

/// Scaled dot-product attention output, shape `(q.rows, v.cols)`.
pub fn attention<S: Scalar>(
    q: &Tensor2<S>,
    k: &Tensor2<S>,
    v: &Tensor2<S>,
    mask: &AttnMask,
) -> Result<Tensor2<S>, KernelError> {
    let weights = attention_weights(q, k, v, mask)?;
    weights.matmul(v)
}

impl<S: Scalar> Graph<S> {
    /// Tape version of [`attention`]. The max shift used for softmax
    /// stability is read from current node values and inserted as a
    /// constant, so it carries no gradient of its own.
    pub fn mat_attention(
        &mut self,
        q: &NodeMat,
        k: &NodeMat,
        v: &NodeMat,
        mask: &AttnMask,
    ) -> Result<NodeMat, KernelError> {
        let qt = self.mat_values(q)?;
        let kt = self.mat_values(k)?;
        let vt = self.mat_values(v)?;
        check_shapes(&qt, &kt, &vt, mask)?;

        let inv_sqrt_d = S::one() / S::from_usize(q.cols()).unwrap().sqrt();
        let zero = self.constant(S::zero());
        let mut weight_rows: Vec<Vec<crate::graph::NodeId>> = Vec::with_capacity(q.rows());
        for r in 0..q.rows() {
            let mut scores = vec![zero; k.rows()];
            for c in 0..k.rows() {
                if !mask.allowed(r, c) {
                    continue;
                }
                let mut acc = self.mul(q.id(r, 0), k.id(c, 0));
                for d in 1..q.cols() {
                    let term = self.mul(q.id(r, d), k.id(c, d));
                    acc = self.add(acc, term);
                }
                scores[c] = self.scale(acc, inv_sqrt_d);
            }
            let mut max = S::neg_infinity();
            for c in 0..k.rows() {
                if mask.allowed(r, c) && self.value(scores[c]) > max {
                    max = self.value(scores[c]);
                }
            }
            let shift = self.constant(max);
            let mut exps = vec![zero; k.rows()];
            let mut total = None;
            for c in 0..k.rows() {
                if mask.allowed(r, c) {
                    let shifted = self.sub(scores[c], shift);
                    exps[c] = self.exp(shifted);
                    total = Some(match total {
                        None => exps[c],
                        Some(t) => self.add(t, exps[c]),
                    });
                }
            }
            let total = total.expect("at least one allowed key per row");
            let mut row = vec![zero; k.rows()];
            for c in 0..k.rows() {
                if mask.allowed(r, c) {
                    row[c] = self.div(exps[c], total);
                }
            }
            weight_rows.push(row);
        }

        let mut out_ids = Vec::with_capacity(q.rows() * v.cols());
        for r in 0..q.rows() {
            for c in 0..v.cols() {
                let mut acc = self.mul(weight_rows[r][0], v.id(0, c));
                for kk in 1..k.rows() {
                    let term = self.mul(weight_rows[r][kk], v.id(kk, c));
                    acc = self.add(acc, term);
                }
                out_ids.push(acc);
            }
        }
        Ok(NodeMat::from_raw(q.rows(), v.cols(), out_ids))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, data: &[f64]) -> Tensor2<f64> {
        Tensor2::new(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn equal_scores_average_values_exactly() {
        let q = t(1, 2, &[0.0, 0.0]);
        let k = t(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let v = t(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let out = attention(&q, &k, &v, &AttnMask::all_allowed(1, 2)).unwrap();
        assert_eq!(out.data(), &[2.0, 3.0]);
    }

    #[test]
    fn single_allowed_key_copies_its_value_row() {
        let q = t(1, 2, &[0.7, -0.3]);
        let k = t(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let v = t(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let mask = AttnMask::from_fn(1, 2, |_, c| c == 1);
        let w = attention_weights(&q, &k, &v, &mask).unwrap();
        assert_eq!(w.data(), &[0.0, 1.0]);
        let out = attention(&q, &k, &v, &mask).unwrap();
        assert_eq!(out.data(), &[3.0, 4.0]);
    }

    #[test]
    fn all_keys_masked_is_an_error() {
        let q = t(2, 2, &[0.0, 0.0, 1.0, 1.0]);
        let k = t(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let v = t(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let mask = AttnMask::from_fn(2, 2, |r, _| r == 0);
        assert_eq!(
            attention(&q, &k, &v, &mask),
            Err(KernelError::AllKeysMasked { row: 1 })
        );
    }

    #[test]
    fn masked_weights_match_dense_large_negative_bias_oracle() {
        // Oracle: plain dense softmax after adding a huge negative bias to
        // disallowed cells.
        let q = t(3, 2, &[0.3, -0.8, 1.1, 0.4, -0.2, 0.9]);
        let k = t(4, 2, &[0.5, 0.1, -0.7, 1.3, 0.2, -0.4, 0.9, 0.8]);
        let v = t(4, 3, &[1.0, 0.0, 2.0, -1.0, 0.5, 0.3, 0.7, -0.6, 1.2, 0.1, 0.9, -0.8]);
        let mask = AttnMask::from_fn(3, 4, |r, c| (r + c) % 3 != 0 || c == 1);

        let w = attention_weights(&q, &k, &v, &mask).unwrap();

        let scale = 1.0 / (2.0f64).sqrt();
        for r in 0..3 {
            let mut scores = [0.0f64; 4];
            for c in 0..4 {
                let s = q.get(r, 0) * k.get(c, 0) + q.get(r, 1) * k.get(c, 1);
                scores[c] = s * scale + if mask.allowed(r, c) { 0.0 } else { -1e9 };
            }
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let total: f64 = exps.iter().sum();
            for c in 0..4 {
                let dense = exps[c] / total;
                if mask.allowed(r, c) {
                    assert!((w.get(r, c) - dense).abs() < 1e-12);
                } else {
                    assert_eq!(w.get(r, c), 0.0);
                }
            }
        }
    }

    #[test]
    fn rows_sum_to_one() {
        let q = t(2, 3, &[0.2, -1.0, 0.5, 1.4, 0.0, -0.3]);
        let k = t(3, 3, &[0.1, 0.2, 0.3, -0.4, 0.5, -0.6, 0.7, -0.8, 0.9]);
        let v = t(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mask = AttnMask::from_fn(2, 3, |r, c| !(r == 0 && c == 2));
        let w = attention_weights(&q, &k, &v, &mask).unwrap();
        for r in 0..2 {
            let sum: f64 = (0..3).map(|c| w.get(r, c)).sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn graph_attention_matches_tensor_attention() {
        let q = t(2, 2, &[0.3, -0.8, 1.1, 0.4]);
        let k = t(3, 2, &[0.5, 0.1, -0.7, 1.3, 0.2, -0.4]);
        let v = t(3, 2, &[1.0, 0.0, -1.0, 0.5, 0.7, -0.6]);
        let mask = AttnMask::from_fn(2, 3, |r, c| r != 0 || c != 1);
        let expect = attention(&q, &k, &v, &mask).unwrap();

        let mut g = Graph::<f64>::new();
        let nq = g.mat_input(&q);
        let nk = g.mat_input(&k);
        let nv = g.mat_input(&v);
        let out = g.mat_attention(&nq, &nk, &nv, &mask).unwrap();
        let got = g.mat_values(&out).unwrap();
        for (a, b) in got.data().iter().zip(expect.data().iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn graph_attention_gradients_match_finite_differences() {
        let q0 = t(1, 2, &[0.4, -0.2]);
        let k0 = t(2, 2, &[0.9, 0.1, -0.3, 0.7]);
        let v0 = t(2, 1, &[1.5, -0.8]);
        let mask = AttnMask::all_allowed(1, 2);

        let loss = |q: &Tensor2<f64>| -> f64 {
            let out = attention(q, &k0, &v0, &mask).unwrap();
            out.data().iter().map(|x| x * x).sum()
        };

        let mut g = Graph::<f64>::new();
        let nq = g.mat_input(&q0);
        let nk = g.mat_input(&k0);
        let nv = g.mat_input(&v0);
        let out = g.mat_attention(&nq, &nk, &nv, &mask).unwrap();
        let mut l = g.mul(out.id(0, 0), out.id(0, 0));
        for idx in 1..out.ids().len() {
            let id = out.ids()[idx];
            let sq = g.mul(id, id);
            l = g.add(l, sq);
        }
        let grads = g.backward(l);

        let h = 1e-5;
        for r in 0..1 {
            for c in 0..2 {
                let mut qp = q0.clone();
                qp.set(r, c, q0.get(r, c) + h);
                let mut qm = q0.clone();
                qm.set(r, c, q0.get(r, c) - h);
                let fd = (loss(&qp) - loss(&qm)) / (2.0 * h);
                let ad = grads.wrt(nq.id(r, c));
                assert!(
                    (ad - fd).abs() <= 1e-7_f64.max(1e-5 * ad.abs().max(fd.abs())),
                    "ad={ad} fd={fd}"
                );
            }
        }
    }
}
