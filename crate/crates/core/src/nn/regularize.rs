use serde::{Deserialize, Serialize};

use super::params::is_weight;
use super::ParamSet;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegularizationConfig {
    pub l2_lambda: f64,
}

impl Default for RegularizationConfig {
    fn default() -> Self {
        Self { l2_lambda: 2e-6 }
    }
}

/// `lambda * sum(w^2)` over weight tensors only (biases excluded).
pub fn l2_penalty(params: &ParamSet, lambda: f64) -> Tensor {
    let mut total: Option<Tensor> = None;
    for (name, t) in params.iter() {
        if !is_weight(name) {
            continue;
        }
        let s = t.square().sum();
        total = Some(match total {
            None => s,
            Some(acc) => acc.add(&s).expect("scalars"),
        });
    }
    total.map_or_else(|| Tensor::scalar(0.0), |t| t.scale(lambda))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EarlyStoppingConfig {
    pub patience: usize,
    pub min_delta: f64,
}

impl Default for EarlyStoppingConfig {
    fn default() -> Self {
        Self {
            patience: 10,
            min_delta: 1e-4,
        }
    }
}

/// True when none of the last `patience` validation losses improved on the
/// best earlier value by more than `min_delta`.
pub fn check_early_stop(history: &[f64], cfg: &EarlyStoppingConfig) -> bool {
    if cfg.patience == 0 || history.len() <= cfg.patience {
        return false;
    }
    let split = history.len() - cfg.patience;
    let best = history[..split].iter().copied().fold(f64::INFINITY, f64::min);
    history[split..].iter().all(|&v| best - v <= cfg.min_delta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ParamSet {
        ParamSet::from_entries(vec![
            ("layer0.weight".into(), Tensor::new(&[1], vec![3.0]).unwrap()),
            ("layer0.bias".into(), Tensor::new(&[1], vec![100.0]).unwrap()),
        ])
        .unwrap()
    }

    #[test]
    fn l2_examples() {
        assert_eq!(l2_penalty(&params(), 0.0).item(), 0.0);
        assert_eq!(l2_penalty(&params(), 1.0).item(), 9.0);
        assert_eq!(l2_penalty(&ParamSet::new(), 1.0).item(), 0.0);
    }

    #[test]
    fn l2_monotone_in_lambda() {
        let mut prev = -1.0;
        for i in 0..20 {
            let v = l2_penalty(&params(), i as f64 * 0.37).item();
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn early_stop_examples() {
        let cfg = EarlyStoppingConfig {
            patience: 2,
            min_delta: 0.0,
        };
        assert!(!check_early_stop(&[5.0, 4.0, 3.0, 2.0, 1.0], &cfg));
        assert!(check_early_stop(&[1.0, 0.9, 0.91, 0.905], &cfg));
        let flat = EarlyStoppingConfig {
            patience: 3,
            min_delta: 1e-4,
        };
        assert!(check_early_stop(&[0.5; 4], &flat));
        assert!(!check_early_stop(&[0.5; 3], &flat));
        // improvement smaller than min_delta does not count
        assert!(check_early_stop(
            &[1.0, 0.99995, 0.9999],
            &EarlyStoppingConfig {
                patience: 2,
                min_delta: 1e-4
            }
        ));
    }
}
