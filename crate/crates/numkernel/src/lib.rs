//! Dense `f64` tensors, a dynamic reverse-mode tape, Adam, and the numerical
//! checks used to verify them.

pub mod adam;
pub mod checkpoint;
mod error;
pub mod gradcheck;
pub mod params;
pub mod rng;
pub mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use error::{KernelError, Result};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use params::{ParamId, ParamStore};
pub use rng::{SeedRoot, StreamRng};
pub use tape::{softmax, Gradients, HeadLayout, Tape, Traversal, Var};
pub use tensor::Tensor;
