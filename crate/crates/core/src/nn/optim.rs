use serde::{Deserialize, Serialize};

use super::{NnError, ParamSet, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Optimizer hyperparameters plus the per-parameter Adam moments.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step_count: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

fn check_aligned(params: &ParamSet, grads: &[Tensor]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(NnError::Misaligned {
            params: params.len(),
            grads: grads.len(),
        });
    }
    for ((name, p), g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(NnError::ParamShape {
                name: name.to_string(),
                expected: p.shape().to_vec(),
                actual: g.shape().to_vec(),
            });
        }
    }
    Ok(())
}

/// Plain gradient descent, `w' = w - lr * g`.
///
/// Written with tensor ops, so when `params` and `grads` are recorded on a
/// tape the update is recorded too.
pub fn sgd_step(params: &ParamSet, grads: &[Tensor], lr: f64) -> Result<ParamSet> {
    check_aligned(params, grads)?;
    let updated = params
        .iter()
        .zip(grads)
        .map(|((_, w), g)| w.sub(&g.scale(lr)))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    params.with_tensors(updated)
}

/// Bias-corrected Adam step. Returns new parameters and state; neither
/// input is modified.
pub fn adam_step(params: &ParamSet, grads: &[Tensor], state: &OptimizerState) -> Result<(ParamSet, OptimizerState)> {
    state.step(params, grads)
}

impl OptimizerState {
    pub fn adam(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            ..Self::adam(lr)
        }
    }

    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        match kind {
            OptimizerKind::Sgd => Self::sgd(lr),
            OptimizerKind::Adam => Self::adam(lr),
        }
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.v
    }

    pub fn step(&self, params: &ParamSet, grads: &[Tensor]) -> Result<(ParamSet, OptimizerState)> {
        check_aligned(params, grads)?;
        let mut next = self.clone();
        next.step_count += 1;
        if self.kind == OptimizerKind::Sgd {
            let p = sgd_step(
                &params.detach(),
                &grads.iter().map(Tensor::detach).collect::<Vec<_>>(),
                self.lr,
            )?;
            return Ok((p, next));
        }
        if next.m.is_empty() {
            next.m = params.iter().map(|(_, p)| p.zeros_like()).collect();
            next.v = next.m.clone();
        } else if next.m.len() != params.len() {
            return Err(NnError::Misaligned {
                params: params.len(),
                grads: next.m.len(),
            });
        }
        let t = next.step_count as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        let mut updated = Vec::with_capacity(params.len());
        for (i, ((_, p), g)) in params.iter().zip(grads).enumerate() {
            let n = p.numel();
            let (mut m, mut v, mut w) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
            for j in 0..n {
                let gj = g.data()[j];
                let mj = self.beta1 * next.m[i].data()[j] + (1.0 - self.beta1) * gj;
                let vj = self.beta2 * next.v[i].data()[j] + (1.0 - self.beta2) * gj * gj;
                let m_hat = mj / bias1;
                let v_hat = vj / bias2;
                w.push(p.data()[j] - self.lr * m_hat / (v_hat.sqrt() + self.epsilon));
                m.push(mj);
                v.push(vj);
            }
            next.m[i] = Tensor::new(p.shape(), m)?;
            next.v[i] = Tensor::new(p.shape(), v)?;
            updated.push(Tensor::new(p.shape(), w)?);
        }
        Ok((params.with_tensors(updated)?, next))
    }

    /// Moments and step counter as a parameter set, for checkpointing.
    pub fn to_param_set(&self, params: &ParamSet) -> Result<ParamSet> {
        let mut out = ParamSet::new();
        out.push("step_count", Tensor::scalar(self.step_count as f64))?;
        out.push("lr", Tensor::scalar(self.lr))?;
        for (i, (name, _)) in params.iter().enumerate() {
            if let (Some(m), Some(v)) = (self.m.get(i), self.v.get(i)) {
                out.push(format!("m.{name}"), m.clone())?;
                out.push(format!("v.{name}"), v.clone())?;
            }
        }
        Ok(out)
    }

    /// Inverse of [`to_param_set`](Self::to_param_set) for an Adam state.
    pub fn adam_from_param_set(saved: &ParamSet, params: &ParamSet) -> Result<Self> {
        let mut state = Self::adam(saved.require("lr")?.item());
        state.step_count = saved.require("step_count")?.item() as u64;
        if state.step_count > 0 {
            for (name, _) in params.iter() {
                state.m.push(saved.require(&format!("m.{name}"))?.clone());
                state.v.push(saved.require(&format!("v.{name}"))?.clone());
            }
        }
        Ok(state)
    }
}
