//! Dense 64-bit tensors, a reverse-mode tape and the Adam optimizer.

mod adam;
pub mod gradcheck;
mod tape;
mod tensor;

pub use adam::{Adam, AdamConfig, AdamOutcome, OptimError};
pub use tape::{Gradients, RunningStats, Tape, TapeError, Var};
pub use tensor::Tensor;
