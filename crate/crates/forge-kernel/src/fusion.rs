//! Dual-pathway fused block.
//!
//! The general pathway runs a plain self-attention + feed-forward block over
//! its own hidden states and never sees the embodied pathway. The embodied
//! pathway attends over the concatenation of the general pathway's keys and
//! values (wrapped in stop-gradient) with its own, then adds its
//! feed-forward term. The block is exactly attention plus feed-forward:
//! no residual stream and no normalization.

use rand::Rng;

use crate::attention::attention;
use crate::graph::{Graph, NodeMat};
use crate::tensor::{AttnMask, Tensor2};
use crate::{KernelError, Scalar};

/// Projection and feed-forward weights for one pathway.
#[derive(Debug, Clone, PartialEq)]
pub struct PathwayParams<S> {
    pub w_q: Tensor2<S>,
    pub w_k: Tensor2<S>,
    pub w_v: Tensor2<S>,
    pub ffn_w1: Tensor2<S>,
    pub ffn_w2: Tensor2<S>,
}

impl<S: Scalar> PathwayParams<S> {
    pub fn new(
        w_q: Tensor2<S>,
        w_k: Tensor2<S>,
        w_v: Tensor2<S>,
        ffn_w1: Tensor2<S>,
        ffn_w2: Tensor2<S>,
    ) -> Result<Self, KernelError> {
        let d = w_q.rows();
        let ok = w_q.shape() == (d, d)
            && w_k.shape() == (d, d)
            && w_v.shape() == (d, d)
            && ffn_w1.rows() == d
            && ffn_w2.shape() == (ffn_w1.cols(), d);
        if !ok {
            return Err(KernelError::ShapeMismatch {
                op: "PathwayParams",
                left_rows: w_q.rows(),
                left_cols: w_q.cols(),
                right_rows: ffn_w1.rows(),
                right_cols: ffn_w2.cols(),
            });
        }
        Ok(Self {
            w_q,
            w_k,
            w_v,
            ffn_w1,
            ffn_w2,
        })
    }

    /// Model width `d`.
    pub fn width(&self) -> usize {
        self.w_q.rows()
    }

    pub fn hidden(&self) -> usize {
        self.ffn_w1.cols()
    }

    pub fn random(d: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut draw = |rows: usize, cols: usize| {
            Tensor2::from_fn(rows, cols, |_, _| S::from_f64_lit(rng.gen_range(-0.8..0.8)))
                .expect("random tensor is finite")
        };
        let w_q = draw(d, d);
        let w_k = draw(d, d);
        let w_v = draw(d, d);
        let ffn_w1 = draw(d, hidden);
        let ffn_w2 = draw(hidden, d);
        Self::new(w_q, w_k, w_v, ffn_w1, ffn_w2).expect("drawn shapes are consistent")
    }

    /// Named views over the five weight tensors, for parameter sweeps.
    pub fn tensors(&self) -> [(&'static str, &Tensor2<S>); 5] {
        [
            ("w_q", &self.w_q),
            ("w_k", &self.w_k),
            ("w_v", &self.w_v),
            ("ffn_w1", &self.ffn_w1),
            ("ffn_w2", &self.ffn_w2),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Tensor2<S>); 5] {
        [
            ("w_q", &mut self.w_q),
            ("w_k", &mut self.w_k),
            ("w_v", &mut self.w_v),
            ("ffn_w1", &mut self.ffn_w1),
            ("ffn_w2", &mut self.ffn_w2),
        ]
    }
}

/// Frozen general pathway plus trainable embodied pathway, same width.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams<S> {
    pub general: PathwayParams<S>,
    pub embodied: PathwayParams<S>,
}

impl<S: Scalar> FusionParams<S> {
    pub fn new(general: PathwayParams<S>, embodied: PathwayParams<S>) -> Result<Self, KernelError> {
        if general.width() != embodied.width() {
            return Err(KernelError::ShapeMismatch {
                op: "FusionParams",
                left_rows: general.width(),
                left_cols: general.width(),
                right_rows: embodied.width(),
                right_cols: embodied.width(),
            });
        }
        Ok(Self { general, embodied })
    }

    pub fn width(&self) -> usize {
        self.general.width()
    }

    pub fn random(d: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self::new(
            PathwayParams::random(d, hidden, rng),
            PathwayParams::random(d, hidden, rng),
        )
        .expect("same width by construction")
    }
}

fn ffn<S: Scalar>(h: &Tensor2<S>, p: &PathwayParams<S>) -> Result<Tensor2<S>, KernelError> {
    h.matmul(&p.ffn_w1)?.map(|x| x.tanh())?.matmul(&p.ffn_w2)
}

fn check_width<S: Scalar>(h: &Tensor2<S>, p: &FusionParams<S>, op: &'static str) -> Result<(), KernelError> {
    if h.cols() != p.width() {
        return Err(KernelError::ShapeMismatch {
            op,
            left_rows: h.rows(),
            left_cols: h.cols(),
            right_rows: p.width(),
            right_cols: p.width(),
        });
    }
    Ok(())
}

/// The general pathway's self-block: attention over its own states plus its
/// feed-forward term. Depends on nothing from the embodied pathway.
pub fn general_block<S: Scalar>(
    h_g: &Tensor2<S>,
    p: &PathwayParams<S>,
) -> Result<Tensor2<S>, KernelError> {
    let q = h_g.matmul(&p.w_q)?;
    let k = h_g.matmul(&p.w_k)?;
    let v = h_g.matmul(&p.w_v)?;
    let attn = attention(&q, &k, &v, &AttnMask::all_allowed(h_g.rows(), h_g.rows()))?;
    attn.add(&ffn(h_g, p)?)
}

/// Joint key and value contexts shown to the embodied queries: general rows
/// first, embodied rows below.
pub fn embodied_context<S: Scalar>(
    h_g: &Tensor2<S>,
    h_e: &Tensor2<S>,
    p: &FusionParams<S>,
) -> Result<(Tensor2<S>, Tensor2<S>), KernelError> {
    let k_g = h_g.matmul(&p.general.w_k)?;
    let v_g = h_g.matmul(&p.general.w_v)?;
    let k_e = h_e.matmul(&p.embodied.w_k)?;
    let v_e = h_e.matmul(&p.embodied.w_v)?;
    Ok((k_g.concat_rows(&k_e)?, v_g.concat_rows(&v_e)?))
}

/// Advances both pathways one layer. On the value level the stop-gradient
/// around the general keys and values is the identity; the tape version
/// makes it a gradient cut.
pub fn fuse_layer<S: Scalar>(
    h_g: &Tensor2<S>,
    h_e: &Tensor2<S>,
    p: &FusionParams<S>,
) -> Result<(Tensor2<S>, Tensor2<S>), KernelError> {
    check_width(h_g, p, "fuse_layer h_g")?;
    check_width(h_e, p, "fuse_layer h_e")?;
    let h_g_next = general_block(h_g, &p.general)?;
    let (k_joint, v_joint) = embodied_context(h_g, h_e, p)?;
    let q_e = h_e.matmul(&p.embodied.w_q)?;
    let mask = AttnMask::all_allowed(h_e.rows(), k_joint.rows());
    let attn = attention(&q_e, &k_joint, &v_joint, &mask)?;
    let h_e_next = attn.add(&ffn(h_e, &p.embodied)?)?;
    Ok((h_g_next, h_e_next))
}

/// Tape handles for one pathway's parameters.
#[derive(Debug, Clone)]
pub struct PathwayNodes {
    pub w_q: NodeMat,
    pub w_k: NodeMat,
    pub w_v: NodeMat,
    pub ffn_w1: NodeMat,
    pub ffn_w2: NodeMat,
}

impl PathwayNodes {
    pub fn param_ids(&self) -> Vec<crate::graph::NodeId> {
        let mut ids = Vec::new();
        for m in [&self.w_q, &self.w_k, &self.w_v, &self.ffn_w1, &self.ffn_w2] {
            ids.extend_from_slice(m.ids());
        }
        ids
    }
}

/// Tape handles for both pathways.
#[derive(Debug, Clone)]
pub struct FusionNodes {
    pub general: PathwayNodes,
    pub embodied: PathwayNodes,
}

impl<S: Scalar> Graph<S> {
    pub fn lift_pathway(&mut self, p: &PathwayParams<S>) -> PathwayNodes {
        PathwayNodes {
            w_q: self.mat_input(&p.w_q),
            w_k: self.mat_input(&p.w_k),
            w_v: self.mat_input(&p.w_v),
            ffn_w1: self.mat_input(&p.ffn_w1),
            ffn_w2: self.mat_input(&p.ffn_w2),
        }
    }

    pub fn lift_fusion(&mut self, p: &FusionParams<S>) -> FusionNodes {
        FusionNodes {
            general: self.lift_pathway(&p.general),
            embodied: self.lift_pathway(&p.embodied),
        }
    }

    fn ffn_graph(&mut self, h: &NodeMat, p: &PathwayNodes) -> Result<NodeMat, KernelError> {
        let pre = self.mat_matmul(h, &p.ffn_w1)?;
        let act = self.mat_tanh(&pre);
        self.mat_matmul(&act, &p.ffn_w2)
    }

    /// Tape version of [`general_block`].
    pub fn general_block_graph(
        &mut self,
        h_g: &NodeMat,
        p: &PathwayNodes,
    ) -> Result<NodeMat, KernelError> {
        let q = self.mat_matmul(h_g, &p.w_q)?;
        let k = self.mat_matmul(h_g, &p.w_k)?;
        let v = self.mat_matmul(h_g, &p.w_v)?;
        let mask = AttnMask::all_allowed(h_g.rows(), h_g.rows());
        let attn = self.mat_attention(&q, &k, &v, &mask)?;
        let f = self.ffn_graph(h_g, p)?;
        self.mat_add(&attn, &f)
    }

    /// Tape version of [`fuse_layer`]. The general keys and values pass
    /// through `stop_grad` before joining the embodied context, so backward
    /// sweeps never reach the general pathway.
    pub fn fuse_layer_graph(
        &mut self,
        h_g: &NodeMat,
        h_e: &NodeMat,
        p: &FusionNodes,
    ) -> Result<(NodeMat, NodeMat), KernelError> {
        let h_g_next = self.general_block_graph(h_g, &p.general)?;

        let k_g = self.mat_matmul(h_g, &p.general.w_k)?;
        let v_g = self.mat_matmul(h_g, &p.general.w_v)?;
        let k_g = self.mat_stop_grad(&k_g);
        let v_g = self.mat_stop_grad(&v_g);
        let k_e = self.mat_matmul(h_e, &p.embodied.w_k)?;
        let v_e = self.mat_matmul(h_e, &p.embodied.w_v)?;
        let k_joint = self.mat_concat_rows(&k_g, &k_e)?;
        let v_joint = self.mat_concat_rows(&v_g, &v_e)?;

        let q_e = self.mat_matmul(h_e, &p.embodied.w_q)?;
        let mask = AttnMask::all_allowed(h_e.rows(), k_joint.rows());
        let attn = self.mat_attention(&q_e, &k_joint, &v_joint, &mask)?;
        let f = self.ffn_graph(h_e, &p.embodied)?;
        let h_e_next = self.mat_add(&attn, &f)?;
        Ok((h_g_next, h_e_next))
    }
}
