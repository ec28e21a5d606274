//! Dense tensors, a recording tape with reverse-mode gradients, Adam, and a
//! finite-difference gradient checker.

mod adam;
mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{compare_gradients, finite_difference_check, relative_error, GradCheckOptions, GradCheckReport, ParamCheck};
pub use params::{ParamId, ParamStore};
pub use tape::{grad, Gradients, Tape, Var};
pub(crate) use tape::sigmoid_f64;
pub use tensor::{Scalar, Tensor};

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum AutodiffError {
    #[error("loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("shape mismatch for parameter {name}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, actual: Vec<usize> },
    #[error("optimizer tracks {expected} parameters but store has {actual}")]
    ParamCountMismatch { expected: usize, actual: usize },
}
