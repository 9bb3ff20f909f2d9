//! Log-likelihood alignment between the posterior and prior branches.
//!
//! The objective rewards the posterior branch for out-scoring the prior
//! while the prior's likelihood enters through a stop-gradient, so the
//! baseline that produced it cannot be pushed around by this loss. Only the
//! sign convention and the gradient cut are fixed here; likelihoods come
//! from whatever head the caller chooses. A toy categorical head is
//! provided for fixtures.

use crate::graph::{Graph, NodeId, NodeMat};
use crate::tensor::Tensor2;
use crate::{KernelError, Scalar};

/// `-(ll_post - ll_prior)` on plain scalars.
pub fn alignment_loss<S: Scalar>(ll_post: S, ll_prior: S) -> S {
    -(ll_post - ll_prior)
}

impl<S: Scalar> Graph<S> {
    /// Tape version: `ll_prior` is routed through `stop_grad`, so backward
    /// sweeps leave everything upstream of it untouched.
    pub fn alignment_loss_node(&mut self, ll_post: NodeId, ll_prior: NodeId) -> NodeId {
        let frozen_prior = self.stop_grad(ll_prior);
        let diff = self.sub(ll_post, frozen_prior);
        self.neg(diff)
    }

    /// Tape version of [`toy_log_likelihood`], same accumulation order.
    pub fn mat_toy_log_likelihood(
        &mut self,
        hidden: &NodeMat,
        head: &NodeMat,
        tokens: &[usize],
    ) -> Result<NodeId, KernelError> {
        check_toy_shapes(hidden.shape(), head.shape(), tokens)?;
        let vocab = head.cols();
        let mut total_ll: Option<NodeId> = None;
        for (r, &tok) in tokens.iter().enumerate() {
            let mut logits = Vec::with_capacity(vocab);
            for j in 0..vocab {
                let mut acc = self.mul(hidden.id(r, 0), head.id(0, j));
                for d in 1..hidden.cols() {
                    let term = self.mul(hidden.id(r, d), head.id(d, j));
                    acc = self.add(acc, term);
                }
                logits.push(acc);
            }
            let mut max = S::neg_infinity();
            for &l in &logits {
                if self.value(l) > max {
                    max = self.value(l);
                }
            }
            let shift = self.constant(max);
            let mut z: Option<NodeId> = None;
            let mut shifted_tok = None;
            for (j, &l) in logits.iter().enumerate() {
                let s = self.sub(l, shift);
                if j == tok {
                    shifted_tok = Some(s);
                }
                let e = self.exp(s);
                z = Some(match z {
                    None => e,
                    Some(acc) => self.add(acc, e),
                });
            }
            let ln_z = self.ln(z.expect("vocab >= 1"));
            let ll = self.sub(shifted_tok.expect("token index checked"), ln_z);
            total_ll = Some(match total_ll {
                None => ll,
                Some(acc) => self.add(acc, ll),
            });
        }
        Ok(total_ll.expect("tokens non-empty"))
    }
}

fn check_toy_shapes(
    hidden: (usize, usize),
    head: (usize, usize),
    tokens: &[usize],
) -> Result<(), KernelError> {
    let (rows, d) = hidden;
    let (hd, vocab) = head;
    if d != hd {
        return Err(KernelError::ShapeMismatch {
            op: "toy_log_likelihood",
            left_rows: rows,
            left_cols: d,
            right_rows: hd,
            right_cols: vocab,
        });
    }
    if tokens.len() != rows {
        return Err(KernelError::TokenCountMismatch {
            tokens: tokens.len(),
            rows,
        });
    }
    for &t in tokens {
        if t >= vocab {
            return Err(KernelError::TokenOutOfVocab { index: t, vocab });
        }
    }
    Ok(())
}

/// Summed log-probability of `tokens` under a linear-softmax head applied
/// row-wise to `hidden`. Row `r` scores token `tokens[r]`.
pub fn toy_log_likelihood<S: Scalar>(
    hidden: &Tensor2<S>,
    head: &Tensor2<S>,
    tokens: &[usize],
) -> Result<S, KernelError> {
    check_toy_shapes(hidden.shape(), head.shape(), tokens)?;
    let vocab = head.cols();
    let mut total = S::zero();
    for (r, &tok) in tokens.iter().enumerate() {
        let mut logits = vec![S::zero(); vocab];
        for (j, logit) in logits.iter_mut().enumerate() {
            let mut acc = S::zero();
            for d in 0..hidden.cols() {
                acc = acc + hidden.get(r, d) * head.get(d, j);
            }
            *logit = acc;
        }
        let max = logits.iter().fold(S::neg_infinity(), |m, &l| m.max(l));
        let mut z = S::zero();
        for &l in &logits {
            z = z + (l - max).exp();
        }
        total = total + (logits[tok] - max) - z.ln();
    }
    Ok(total)
}
