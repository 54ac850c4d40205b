//! Model-agnostic meta-learning.
//!
//! The inner loop is plain gradient descent written with tape-recorded
//! tensor ops, so the adapted parameters stay differentiable with respect
//! to the initial ones. The outer loop differentiates the query loss at the
//! adapted parameters back to the initialization, either exactly or with
//! the first-order shortcut.

mod sinusoid;
mod train;

pub use sinusoid::{sinusoid_episode, sinusoid_model, SinusoidRanges, SinusoidSource, SinusoidTask};
pub use train::{
    conv_classifier, eval_tasks, meta_test, meta_train, meta_train_with, EpisodeResult, EpisodeSource, IterationRecord,
    MetaState, MetaTestResult, MetaTrainLog, TaskSource,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::episodes::{Episode, EpisodeSpec};
use crate::nn::{forward, sgd_step, Mode, ModelSpec, NnError, ParamSet};
use crate::tensor::{grad, mse_loss, softmax_cross_entropy, Tape, Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum MamlError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Episode(#[from] crate::episodes::EpisodeError),
    #[error("invalid MAML config: {0}")]
    InvalidConfig(String),
    #[error("support set is empty")]
    EmptySupport,
    #[error("no tasks in meta-batch")]
    NoTasks,
    #[error("{0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, MamlError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MamlConfig {
    /// Upper bound on outer steps.
    pub meta_iterations: usize,
    pub meta_lr: f64,
    pub inner_lr: f64,
    pub inner_steps_train: usize,
    pub inner_steps_test: usize,
    /// Episodes per meta-batch.
    pub task_num: usize,
    pub first_order: bool,
    pub episode: EpisodeSpec,
    /// Run a meta-test every this many iterations; 0 disables it.
    pub eval_every: usize,
    /// Stop once a periodic meta-test reaches this accuracy.
    pub target_accuracy: Option<f64>,
}

impl Default for MamlConfig {
    fn default() -> Self {
        Self {
            meta_iterations: 60000,
            meta_lr: 0.001,
            inner_lr: 0.01,
            inner_steps_train: 5,
            inner_steps_test: 10,
            task_num: 4,
            first_order: false,
            episode: EpisodeSpec::default(),
            eval_every: 0,
            target_accuracy: None,
        }
    }
}

impl MamlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.meta_lr > 0.0 && self.inner_lr > 0.0) {
            return Err(MamlError::InvalidConfig(format!(
                "learning rates must be positive (meta_lr {}, inner_lr {})",
                self.meta_lr, self.inner_lr
            )));
        }
        if self.task_num == 0 {
            return Err(MamlError::InvalidConfig("task_num must be at least 1".into()));
        }
        if let Some(t) = self.target_accuracy {
            if !(0.0..=1.0).contains(&t) {
                return Err(MamlError::InvalidConfig(format!("target_accuracy {t} outside [0, 1]")));
            }
        }
        self.episode.validate()?;
        Ok(())
    }
}

/// Regression values or class labels for a batch.
#[derive(Debug, Clone)]
pub enum Targets {
    Classes(Vec<usize>),
    Values(Tensor),
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Tensor,
    pub targets: Targets,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.inputs.shape().first().copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Mean loss of `params` on this batch, plus the model output.
    pub fn loss(&self, spec: &ModelSpec, params: &ParamSet) -> Result<(Tensor, Tensor)> {
        let out = forward(spec, params, &self.inputs, Mode::Eval)?;
        let loss = match &self.targets {
            Targets::Classes(labels) => softmax_cross_entropy(&out, labels)?,
            Targets::Values(v) => mse_loss(&out, v)?,
        };
        Ok((loss, out))
    }

    /// Fraction of correct argmax predictions, for classification batches.
    pub fn accuracy(&self, output: &Tensor) -> Result<Option<f64>> {
        match &self.targets {
            Targets::Classes(labels) => {
                let pred = output.argmax_rows()?;
                let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
                Ok(Some(hits as f64 / labels.len() as f64))
            }
            Targets::Values(_) => Ok(None),
        }
    }
}

/// One learning problem: adapt on `support`, evaluate on `query`.
#[derive(Debug, Clone)]
pub struct Task {
    pub support: Batch,
    pub query: Batch,
}

impl From<&Episode> for Task {
    fn from(ep: &Episode) -> Self {
        let (xs, ys) = ep.support_batch();
        let (xq, yq) = ep.query_batch();
        Task {
            support: Batch {
                inputs: xs,
                targets: Targets::Classes(ys),
            },
            query: Batch {
                inputs: xq,
                targets: Targets::Classes(yq),
            },
        }
    }
}

/// `steps` gradient-descent updates of `params` on `loss`.
///
/// With `track_higher_order` the gradients are themselves recorded, so the
/// result is differentiable through the whole update chain. Without it the
/// gradients are constants and `d theta' / d theta` is the identity.
/// Parameters that are not on a tape are adapted on a private tape and the
/// result is returned detached. The input set is never modified.
pub fn adapt<F>(params: &ParamSet, steps: usize, lr: f64, track_higher_order: bool, loss: F) -> Result<ParamSet>
where
    F: Fn(&ParamSet) -> Result<Tensor>,
{
    if steps == 0 {
        return Ok(params.clone());
    }
    let local = (!params.requires_grad()).then(Tape::new);
    let mut cur = match &local {
        Some(tape) => params.watch(tape),
        None => params.clone(),
    };
    for _ in 0..steps {
        let l = loss(&cur)?;
        let g = grad(&l, &cur.tensors(), track_higher_order)?;
        cur = sgd_step(&cur, &g, lr)?;
    }
    Ok(if local.is_some() { cur.detach() } else { cur })
}

/// [`adapt`] on a model's support-batch loss.
pub fn inner_adapt(
    spec: &ModelSpec,
    params: &ParamSet,
    support: &Batch,
    steps: usize,
    inner_lr: f64,
    track_higher_order: bool,
) -> Result<ParamSet> {
    if support.is_empty() {
        return Err(MamlError::EmptySupport);
    }
    adapt(params, steps, inner_lr, track_higher_order, |p| {
        Ok(support.loss(spec, p)?.0)
    })
}

/// Mean query loss and accuracy over a meta-batch at the adapted parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryMetrics {
    pub loss: f64,
    pub accuracy: Option<f64>,
}

/// Meta-gradient for `n_tasks` tasks described by closures.
///
/// `support(i, p)` is task `i`'s adaptation loss; `query(i, p)` returns its
/// query loss and optional accuracy. Each task runs on its own tape, in
/// parallel, and per-task gradients are averaged in task order.
pub fn meta_gradient_with<S, Q>(
    params: &ParamSet,
    n_tasks: usize,
    inner_steps: usize,
    inner_lr: f64,
    first_order: bool,
    support: S,
    query: Q,
) -> Result<(Vec<Tensor>, QueryMetrics)>
where
    S: Fn(usize, &ParamSet) -> Result<Tensor> + Sync,
    Q: Fn(usize, &ParamSet) -> Result<(Tensor, Option<f64>)> + Sync,
{
    if n_tasks == 0 {
        return Err(MamlError::NoTasks);
    }
    let base = params.detach();
    let per_task = (0..n_tasks)
        .into_par_iter()
        .map(|i| {
            let tape = Tape::new();
            let theta = base.watch(&tape);
            let fast = adapt(&theta, inner_steps, inner_lr, !first_order, |p| support(i, p))?;
            let (loss, acc) = query(i, &fast)?;
            let g = grad(&loss, &theta.tensors(), false)?;
            Ok((g, loss.item(), acc))
        })
        .collect::<Result<Vec<_>>>()?;

    let scale = 1.0 / n_tasks as f64;
    let mut sums: Vec<Vec<f64>> = base.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
    let (mut loss, mut acc_sum, mut acc_n) = (0.0, 0.0, 0);
    for (g, l, a) in &per_task {
        for (s, gi) in sums.iter_mut().zip(g) {
            for (x, y) in s.iter_mut().zip(gi.data()) {
                *x += y;
            }
        }
        loss += l;
        if let Some(a) = a {
            acc_sum += a;
            acc_n += 1;
        }
    }
    let grads = sums
        .into_iter()
        .zip(base.iter())
        .map(|(s, (_, t))| Tensor::new(t.shape(), s.into_iter().map(|v| v * scale).collect()))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let metrics = QueryMetrics {
        loss: loss * scale,
        accuracy: (acc_n == n_tasks).then(|| acc_sum / n_tasks as f64),
    };
    Ok((grads, metrics))
}

/// Meta-gradient of the mean query loss over `tasks` with respect to
/// `params`, adapting with `cfg.inner_steps_train` steps at `cfg.inner_lr`.
pub fn meta_gradient(
    spec: &ModelSpec,
    params: &ParamSet,
    tasks: &[Task],
    cfg: &MamlConfig,
) -> Result<(Vec<Tensor>, QueryMetrics)> {
    if tasks.iter().any(|t| t.support.is_empty()) {
        return Err(MamlError::EmptySupport);
    }
    meta_gradient_with(
        params,
        tasks.len(),
        cfg.inner_steps_train,
        cfg.inner_lr,
        cfg.first_order,
        |i, p| Ok(tasks[i].support.loss(spec, p)?.0),
        |i, p| {
            let (loss, out) = tasks[i].query.loss(spec, p)?;
            let acc = tasks[i].query.accuracy(&out)?;
            Ok((loss, acc))
        },
    )
}
