//! Reverse-mode differentiation over small dense `f64` tensors.
//!
//! The primitive set is deliberately narrow: affine maps, the pointwise
//! nonlinearities, row-wise softmax and cumulative sum (together they form
//! the `cummax` gate), elementwise arithmetic, concatenation, clamped `log`
//! and `sqrt`, reductions, inverted dropout and a handful of indexing ops.

mod gradcheck;
mod graph;
mod param;
mod tensor;

pub use gradcheck::{grad_check, relative_error, CheckReport, GradCheckError, ParamCheck, REL_ERR_FLOOR};
pub use graph::{Graph, Primitive, PrimitiveKind, Var, DEFAULT_CLAMP};
pub use param::{ParamId, ParamStore, Parameter};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("{op}: incompatible shapes {shapes:?}")]
    Shape {
        op: &'static str,
        shapes: Vec<Vec<usize>>,
    },
    #[error("{op}: expected {expected} inputs, got {got}")]
    Arity {
        op: String,
        expected: usize,
        got: usize,
    },
    #[error("{op}: input {value} outside the domain")]
    Domain { op: &'static str, value: f64 },
    #[error("{op}: index {index} out of range for {len} rows")]
    Index {
        op: &'static str,
        index: usize,
        len: usize,
    },
    #[error("dropout rate {0} outside [0, 1)")]
    DropoutRate(f64),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("graph already consumed by backward; record a new forward pass first")]
    GraphConsumed,
    #[error("duplicate parameter name `{0}`")]
    DuplicateParameter(String),
}
