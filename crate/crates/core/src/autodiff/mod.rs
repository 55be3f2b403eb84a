//! Reverse-mode differentiation over dense fields with gradient checkpointing.

mod checkpoint;
mod gradcheck;
mod nn;
mod ops;
mod tape;
mod tensor;

pub use checkpoint::{checkpointed_unroll, unroll, Checkpointing, StepCtx, StepFn, UnrollGradients, Unrolled};
pub use gradcheck::{finite_difference_check, GradCheck, ScalarLoss, TapeLoss};
pub use ops::{sigmoid, Padding};
pub use tape::{Gradients, Tape, Var, VjpOp};
pub use tensor::Tensor;

/// Alternative name for [`Var`].
pub type DiffVar = Var;
