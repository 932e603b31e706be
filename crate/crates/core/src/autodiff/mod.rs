//! Reverse-mode automatic differentiation over dense row-major arrays.
//!
//! The primitive set is deliberately small: exactly what the captioning
//! decoders need. There is no broadcasting; shape alignment is explicit via
//! concat/reshape, and dropout masks are externally supplied tensors so that
//! every forward pass is a pure function of its inputs.

mod gradcheck;
pub mod ops;
mod store;
mod tape;
mod tensor;

use thiserror::Error;

pub use gradcheck::{grad_check, GradCheckReport, GradCheckRow};
pub use ops::Op;
pub use store::{
    load_checkpoint, load_checkpoint_file, save_checkpoint, save_checkpoint_file,
    CheckpointError, ParamEntry, ParameterStore,
};
pub use tape::{Gradients, Tape, Var};
pub use tensor::TensorBase;

/// Fatal input or numeric errors raised by tape operations.
#[derive(Debug, Error)]
pub enum TapeError {
    #[error("shape {shape:?} implies {expected} elements, got {len}",
            expected = shape.iter().product::<usize>())]
    ShapeDataMismatch { shape: Vec<usize>, len: usize },
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch { op: &'static str, left: Vec<usize>, right: Vec<usize> },
    #[error("{op}: unsupported rank for shape {shape:?}")]
    UnsupportedRank { op: &'static str, shape: Vec<usize> },
    #[error("{op}: expected {expected} inputs, got {got}")]
    ArityMismatch { op: &'static str, expected: &'static str, got: usize },
    #[error("{op}: empty input")]
    EmptyInput { op: &'static str },
    #[error("masked-softmax-rows: row {row} has every entry masked")]
    AllMaskedRow { row: usize },
    #[error("mean-rows: every row is masked")]
    AllRowsMaskedMean,
    #[error("{op}: index {index} out of bounds for size {size}")]
    IndexOutOfBounds { op: &'static str, index: usize, size: usize },
    #[error("{op}: non-finite value in output")]
    NonFinite { op: &'static str },
    #[error("backward: loss must be a scalar, got shape {shape:?}")]
    LossNotScalar { shape: Vec<usize> },
    #[error("expected a scalar tensor, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("duplicate parameter name {0:?} on tape")]
    DuplicateParam(String),
    #[error("grad-check closure is not deterministic: {first} vs {second}")]
    NonDeterministicClosure { first: f64, second: f64 },
}
