//! Layers, parameter sets, optimizers and regularization shared by the
//! meta-learner and the transfer baseline.

pub mod checkpoint;
mod model;
mod optim;
mod params;
mod regularize;

pub use model::{forward, init_params, init_params_with, Activation, InitScheme, InputShape, Layer, Mode, ModelSpec};
pub use optim::{adam_step, sgd_step, OptimizerKind, OptimizerState};
pub use params::{is_weight, ParamSet};
pub use regularize::{check_early_stop, l2_penalty, EarlyStoppingConfig, RegularizationConfig};

use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("input shape {actual:?} does not match model input {expected:?} (plus batch dimension)")]
    InputShape { expected: Vec<usize>, actual: Vec<usize> },
    #[error("duplicate parameter name {0:?}")]
    DuplicateParam(String),
    #[error("missing parameter {0:?}")]
    MissingParam(String),
    #[error("parameter {name:?} has shape {actual:?}, expected {expected:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("{params} parameters but {grads} gradients")]
    Misaligned { params: usize, grads: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {error}")]
    Io { path: String, error: std::io::Error },
}

pub type Result<T> = std::result::Result<T, NnError>;
