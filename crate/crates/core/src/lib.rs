pub mod data;
pub mod episodes;
pub mod maml;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod transfer;

pub use rng::Rng;
pub use tensor::{grad, Tape, Tensor, TensorError};
