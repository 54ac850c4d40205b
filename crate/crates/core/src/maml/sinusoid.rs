use serde::{Deserialize, Serialize};

use super::{Batch, Result, Targets, Task, TaskSource};
use crate::nn::{InputShape, Layer, ModelSpec};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Sampling ranges of the sinusoid task family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SinusoidRanges {
    pub amplitude: [f64; 2],
    pub phase: [f64; 2],
    pub x: [f64; 2],
}

impl Default for SinusoidRanges {
    fn default() -> Self {
        Self {
            amplitude: [0.1, 5.0],
            phase: [0.0, std::f64::consts::PI],
            x: [-5.0, 5.0],
        }
    }
}

/// `y = amplitude * sin(x - phase)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinusoidTask {
    pub amplitude: f64,
    pub phase: f64,
}

impl SinusoidTask {
    pub fn sample(ranges: &SinusoidRanges, rng: &mut Rng) -> Self {
        let amplitude = rng.uniform(ranges.amplitude[0], ranges.amplitude[1]);
        let phase = rng.uniform(ranges.phase[0], ranges.phase[1]);
        Self { amplitude, phase }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.amplitude * (x - self.phase).sin()
    }

    /// `k` points with `x` uniform over `x_range`, as `[k, 1]` tensors.
    pub fn batch(&self, k: usize, x_range: [f64; 2], rng: &mut Rng) -> Batch {
        let xs: Vec<f64> = (0..k).map(|_| rng.uniform(x_range[0], x_range[1])).collect();
        let ys = xs.iter().map(|&x| self.eval(x)).collect();
        Batch {
            inputs: Tensor::new(&[k, 1], xs).expect("k x 1"),
            targets: Targets::Values(Tensor::new(&[k, 1], ys).expect("k x 1")),
        }
    }
}

/// Regression episode with independently drawn support and query points.
pub fn sinusoid_episode(
    task: &SinusoidTask,
    k_support: usize,
    k_query: usize,
    x_range: [f64; 2],
    rng: &mut Rng,
) -> Task {
    assert!(
        k_support >= 1 && k_query >= 1,
        "sinusoid episodes need at least one support and one query point"
    );
    Task {
        support: task.batch(k_support, x_range, rng),
        query: task.batch(k_query, x_range, rng),
    }
}

/// The 1-40-40-1 ReLU regressor.
pub fn sinusoid_model() -> ModelSpec {
    ModelSpec::new(
        InputShape::Vector(1),
        vec![
            Layer::Dense { input: 1, output: 40 },
            Layer::Relu,
            Layer::Dense { input: 40, output: 40 },
            Layer::Relu,
            Layer::Dense { input: 40, output: 1 },
        ],
    )
    .expect("static architecture")
}

/// Fresh random sinusoid tasks for every meta-batch.
#[derive(Debug, Clone)]
pub struct SinusoidSource {
    pub ranges: SinusoidRanges,
    pub k_support: usize,
    pub k_query: usize,
    pub seed: u64,
}

impl TaskSource for SinusoidSource {
    fn train_batch(&self, iteration: usize, task_num: usize) -> Result<Vec<Task>> {
        let base = Rng::new(self.seed).derive_index("meta_batch", iteration as u64);
        Ok((0..task_num)
            .map(|i| {
                let mut rng = base.derive_index("task", i as u64);
                let task = SinusoidTask::sample(&self.ranges, &mut rng);
                sinusoid_episode(&task, self.k_support, self.k_query, self.ranges.x, &mut rng)
            })
            .collect())
    }
}
