//! Desk-scale reference numerics for a dual-pathway transformer block with
//! asymmetric stop-gradient fusion, prior/posterior action-query layouts, and
//! a flow-matching action objective.
//!
//! The crate is deliberately small and auditable: dense row-major matrices,
//! single-head attention, and a scalar reverse-mode graph whose only job is
//! to make gradient-flow claims checkable. Everything numeric is generic
//! over the scalar type via [`Scalar`]; concrete aliases for the two
//! supported widths live at the crate root.

pub mod alignment;
pub mod attention;
pub mod check;
pub mod error;
pub mod flow;
pub mod fusion;
pub mod graph;
pub mod layout;
mod scalar;
pub mod tensor;

pub use error::KernelError;
pub use scalar::Scalar;

pub type Tensor2F32 = tensor::Tensor2<f32>;
pub type Tensor2F64 = tensor::Tensor2<f64>;
pub type GraphF32 = graph::Graph<f32>;
pub type GraphF64 = graph::Graph<f64>;
pub type FusionParamsF32 = fusion::FusionParams<f32>;
pub type FusionParamsF64 = fusion::FusionParams<f64>;
