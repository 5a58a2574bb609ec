//! Numeric substrate: tensors, reverse-mode differentiation, MLPs, Adam,
//! target-network averaging and parameter checkpoints.

pub mod checkpoint;
mod mlp;
mod optim;
mod tape;
mod tensor;

pub use checkpoint::Checkpoint;
pub use mlp::{polyak_update, BoundMlp, Layer, MlpNet};
pub use optim::{AdamConfig, AdamState, StepOutcome};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::{huber, log_add_exp, quantile_huber_value, softplus, tanh};
