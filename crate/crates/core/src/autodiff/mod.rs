//! Dense tensors, a define-by-run reverse-mode tape, the layers the story
//! models are assembled from, Adam, a finite-difference gradient checker and
//! the binary checkpoint format.

pub mod checkpoint;
mod gradcheck;
mod graph;
mod nn;
mod optim;
mod params;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckConfig, GradCheckReport, ParamCheck};
pub use graph::{FaultInjection, Gradients, Graph, OpKind, Var};
pub use nn::{BiLstm, BiLstmOutput, Embedding, Linear, LstmCell, LstmState};
pub use optim::{Adam, AdamConfig};
pub use params::{Initializer, ParamId, ParamStore};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape {
        shape: Vec<usize>,
        reason: &'static str,
    },
    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },
    #[error("{op}: index {index} out of range (bound {bound})")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("{op}: empty input")]
    EmptyInput { op: &'static str },
    #[error("loss must be a single element, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("loss is not finite")]
    NonFiniteLoss,
    #[error("parameter {0} registered twice")]
    DuplicateParam(String),
    #[error("parameter {0} missing")]
    MissingParam(String),
    #[error("unexpected parameter {0}")]
    UnexpectedParam(String),
    #[error("no gradient for trainable parameter {0}")]
    MissingGradient(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;
