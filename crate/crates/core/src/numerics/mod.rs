//! Dense arrays, reverse-mode differentiation and the finite-difference check.

mod gradcheck;
mod graph;
pub mod ops;
mod params;
mod real;
mod tensor;

use alloc::vec::Vec;

pub use gradcheck::{central_difference, grad_check, relative_error};
pub use graph::{Gradients, Graph, Var};
pub use ops::{gelu, l2_normalize, layer_norm, row_softmax};
pub use params::{Parameter, ParameterSet};
pub use real::{Precision, Real};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("shape {shape:?} has an empty extent")]
    EmptyExtent { shape: Vec<usize> },
    #[error("shape holds {expected} elements but {actual} were given")]
    ShapeData { expected: usize, actual: usize },
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Mismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("cannot normalize a vector with zero norm")]
    ZeroNorm,
    #[error("temperature must be positive, got {0}")]
    Temperature(f64),
}
