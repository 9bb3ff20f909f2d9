//! Scalar reverse-mode differentiation over an append-only tape.
//!
//! Values are evaluated eagerly as nodes are pushed, so every node records
//! its local partial derivatives at construction time and `backward` is a
//! single weighted sweep in reverse insertion order. Because node parents
//! must already exist when a node is created, the graph is acyclic by
//! construction. A `stop_grad` node passes its value through unchanged but
//! contributes zero adjoint to everything upstream of it.

use crate::{KernelError, Scalar};
use crate::tensor::Tensor2;

/// Handle to a node in a [`Graph`]. Only valid for the graph that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Parents<S> {
    None,
    One { p: NodeId, d: S },
    Two { p0: NodeId, d0: S, p1: NodeId, d1: S },
}

#[derive(Debug, Clone)]
struct Node<S> {
    value: S,
    parents: Parents<S>,
    stop: bool,
}

/// Append-only tape of scalar operations.
#[derive(Debug, Default)]
pub struct Graph<S> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> S {
        self.nodes[id.0].value
    }

    fn push(&mut self, value: S, parents: Parents<S>, stop: bool) -> NodeId {
        self.nodes.push(Node { value, parents, stop });
        NodeId(self.nodes.len() - 1)
    }

    /// Leaf node whose adjoint is reported by `backward`.
    pub fn input(&mut self, v: S) -> NodeId {
        self.push(v, Parents::None, false)
    }

    /// Leaf node for fixed values; identical to `input` in backward.
    pub fn constant(&mut self, v: S) -> NodeId {
        self.push(v, Parents::None, false)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) + self.value(b);
        self.push(
            v,
            Parents::Two {
                p0: a,
                d0: S::one(),
                p1: b,
                d1: S::one(),
            },
            false,
        )
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a) - self.value(b);
        self.push(
            v,
            Parents::Two {
                p0: a,
                d0: S::one(),
                p1: b,
                d1: -S::one(),
            },
            false,
        )
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        self.push(
            va * vb,
            Parents::Two {
                p0: a,
                d0: vb,
                p1: b,
                d1: va,
            },
            false,
        )
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        self.push(
            va / vb,
            Parents::Two {
                p0: a,
                d0: S::one() / vb,
                p1: b,
                d1: -va / (vb * vb),
            },
            false,
        )
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let v = -self.value(a);
        self.push(v, Parents::One { p: a, d: -S::one() }, false)
    }

    pub fn scale(&mut self, a: NodeId, k: S) -> NodeId {
        let v = self.value(a) * k;
        self.push(v, Parents::One { p: a, d: k }, false)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).exp();
        self.push(v, Parents::One { p: a, d: v }, false)
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let va = self.value(a);
        self.push(
            va.ln(),
            Parents::One {
                p: a,
                d: S::one() / va,
            },
            false,
        )
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).tanh();
        self.push(
            v,
            Parents::One {
                p: a,
                d: S::one() - v * v,
            },
            false,
        )
    }

    /// Identity on the forward value; blocks all adjoint flow upstream.
    pub fn stop_grad(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        self.push(v, Parents::One { p: a, d: S::one() }, true)
    }

    /// Accumulates adjoints of every node with respect to `output`.
    pub fn backward(&self, output: NodeId) -> Gradients<S> {
        let mut adjoint = vec![S::zero(); self.nodes.len()];
        adjoint[output.0] = S::one();
        for i in (0..=output.0).rev() {
            let a = adjoint[i];
            if a == S::zero() {
                continue;
            }
            let node = &self.nodes[i];
            if node.stop {
                continue;
            }
            match node.parents {
                Parents::None => {}
                Parents::One { p, d } => adjoint[p.0] = adjoint[p.0] + a * d,
                Parents::Two { p0, d0, p1, d1 } => {
                    adjoint[p0.0] = adjoint[p0.0] + a * d0;
                    adjoint[p1.0] = adjoint[p1.0] + a * d1;
                }
            }
        }
        Gradients { adjoint }
    }
}

/// Adjoints from one `backward` sweep.
#[derive(Debug, Clone)]
pub struct Gradients<S> {
    adjoint: Vec<S>,
}

impl<S: Scalar> Gradients<S> {
    pub fn wrt(&self, id: NodeId) -> S {
        self.adjoint[id.index()]
    }
}

/// Matrix of node handles, row-major, for lifting tensor computations onto
/// the tape.
#[derive(Debug, Clone)]
pub struct NodeMat {
    rows: usize,
    cols: usize,
    ids: Vec<NodeId>,
}

impl NodeMat {
    pub(crate) fn from_raw(rows: usize, cols: usize, ids: Vec<NodeId>) -> Self {
        debug_assert_eq!(ids.len(), rows * cols);
        Self { rows, cols, ids }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn id(&self, r: usize, c: usize) -> NodeId {
        self.ids[r * self.cols + c]
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }
}

impl<S: Scalar> Graph<S> {
    /// Lifts a tensor onto the tape as leaf inputs.
    pub fn mat_input(&mut self, t: &Tensor2<S>) -> NodeMat {
        let ids = t.data().iter().map(|&v| self.input(v)).collect();
        NodeMat {
            rows: t.rows(),
            cols: t.cols(),
            ids,
        }
    }

    /// Reads current values back out as a tensor.
    pub fn mat_values(&self, m: &NodeMat) -> Result<Tensor2<S>, KernelError> {
        Tensor2::new(m.rows, m.cols, m.ids.iter().map(|&id| self.value(id)).collect())
    }

    /// Node-level matmul with the same ascending-`k` accumulation order as
    /// the tensor version.
    pub fn mat_matmul(&mut self, a: &NodeMat, b: &NodeMat) -> Result<NodeMat, KernelError> {
        if a.cols != b.rows {
            return Err(KernelError::ShapeMismatch {
                op: "mat_matmul",
                left_rows: a.rows,
                left_cols: a.cols,
                right_rows: b.rows,
                right_cols: b.cols,
            });
        }
        let mut ids = Vec::with_capacity(a.rows * b.cols);
        for r in 0..a.rows {
            for c in 0..b.cols {
                let mut acc = self.mul(a.id(r, 0), b.id(0, c));
                for k in 1..a.cols {
                    let term = self.mul(a.id(r, k), b.id(k, c));
                    acc = self.add(acc, term);
                }
                ids.push(acc);
            }
        }
        Ok(NodeMat {
            rows: a.rows,
            cols: b.cols,
            ids,
        })
    }

    pub fn mat_add(&mut self, a: &NodeMat, b: &NodeMat) -> Result<NodeMat, KernelError> {
        if a.shape() != b.shape() {
            return Err(KernelError::ShapeMismatch {
                op: "mat_add",
                left_rows: a.rows,
                left_cols: a.cols,
                right_rows: b.rows,
                right_cols: b.cols,
            });
        }
        let ids = a
            .ids
            .iter()
            .zip(b.ids.iter())
            .map(|(&x, &y)| self.add(x, y))
            .collect();
        Ok(NodeMat {
            rows: a.rows,
            cols: a.cols,
            ids,
        })
    }

    pub fn mat_tanh(&mut self, a: &NodeMat) -> NodeMat {
        let ids = a.ids.iter().map(|&id| self.tanh(id)).collect();
        NodeMat {
            rows: a.rows,
            cols: a.cols,
            ids,
        }
    }

    pub fn mat_stop_grad(&mut self, a: &NodeMat) -> NodeMat {
        let ids = a.ids.iter().map(|&id| self.stop_grad(id)).collect();
        NodeMat {
            rows: a.rows,
            cols: a.cols,
            ids,
        }
    }

    pub fn mat_concat_rows(&mut self, top: &NodeMat, bottom: &NodeMat) -> Result<NodeMat, KernelError> {
        if top.cols != bottom.cols {
            return Err(KernelError::ShapeMismatch {
                op: "mat_concat_rows",
                left_rows: top.rows,
                left_cols: top.cols,
                right_rows: bottom.rows,
                right_cols: bottom.cols,
            });
        }
        let mut ids = top.ids.clone();
        ids.extend_from_slice(&bottom.ids);
        Ok(NodeMat {
            rows: top.rows + bottom.rows,
            cols: top.cols,
            ids,
        })
    }
}
