//! Dense row-major `f64` matrices, a reverse-mode differentiation tape over a
//! small set of primitives, a named parameter store with optimizers, and a
//! central finite-difference gradient checker.
//!
//! The primitive set is deliberately narrow: it spans what a question-conditioned
//! graph attention encoder and a softmax cross-entropy objective need, and
//! nothing else. Every primitive validates shapes and rejects non-finite
//! results.

mod error;
mod gradcheck;
mod matrix;
mod optim;
mod params;
mod tape;

pub use error::TensorError;
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, SlotReport};
pub use matrix::Matrix;
pub use optim::{adam_step, sgd_step, AdamConfig, Optimizer};
pub use params::{Checkpoint, CheckpointSlot, ParameterStore, Slot, CHECKPOINT_FORMAT_VERSION};
pub use tape::{Activation, Gradients, Tape, Var};

pub type Result<T, E = TensorError> = std::result::Result<T, E>;
