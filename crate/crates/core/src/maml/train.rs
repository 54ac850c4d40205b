use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use super::{inner_adapt, meta_gradient, MamlConfig, MamlError, Result, Targets, Task};
use crate::data::Dataset;
use crate::episodes::{EpisodeSampler, EpisodeSpec};
use crate::nn::{checkpoint, InputShape, Layer, ModelSpec, OptimizerState, ParamSet};
use crate::rng::Rng;

/// The episode classifier: `blocks` stride-2 3x3 conv (+ batch norm) + ReLU
/// blocks, flattened into a dense head over `n_way` classes.
pub fn conv_classifier(
    image_size: [usize; 2],
    n_way: usize,
    width: usize,
    blocks: usize,
    batch_norm: bool,
) -> Result<ModelSpec> {
    let mut layers = Vec::new();
    let mut c_in = 3;
    for _ in 0..blocks {
        layers.push(Layer::Conv {
            c_in,
            c_out: width,
            kernel: 3,
            stride: 2,
            pad: 1,
        });
        if batch_norm {
            layers.push(Layer::BatchNorm { channels: width });
        }
        layers.push(Layer::Relu);
        c_in = width;
    }
    layers.push(Layer::Flatten);
    layers.push(Layer::SoftmaxHead { classes: n_way });
    let input = InputShape::Image {
        channels: 3,
        height: image_size[0],
        width: image_size[1],
    };
    Ok(ModelSpec::new(input, layers)?)
}

/// Produces meta-training batches and an optional fixed meta-test set.
///
/// `train_batch` must be a pure function of its arguments so that a resumed
/// run sees the same batches as an uninterrupted one.
pub trait TaskSource: Sync {
    fn train_batch(&self, iteration: usize, task_num: usize) -> Result<Vec<Task>>;

    /// Tasks for the periodic meta-test.
    fn eval_tasks(&self) -> Option<&[Task]> {
        None
    }
}

/// Episodes from a meta-training split, with meta-test episodes drawn once
/// from a separate split.
pub struct EpisodeSource {
    sampler: EpisodeSampler,
    seed: u64,
    eval: Vec<Task>,
}

impl EpisodeSource {
    pub fn new(train: &Dataset, spec: &EpisodeSpec, seed: u64) -> Result<Self> {
        Ok(Self {
            sampler: EpisodeSampler::new(train, spec)?,
            seed,
            eval: Vec::new(),
        })
    }

    /// Fix `count` meta-test episodes sampled from `test`.
    pub fn with_eval(mut self, test: &Dataset, count: usize) -> Result<Self> {
        self.eval = eval_tasks(
            test,
            self.sampler.spec(),
            count,
            Rng::new(self.seed).derive("meta_test"),
        )?;
        Ok(self)
    }
}

/// `count` episodes from `ds`, episode `i` on sub-stream `i` of `rng`.
pub fn eval_tasks(ds: &Dataset, spec: &EpisodeSpec, count: usize, rng: Rng) -> Result<Vec<Task>> {
    let sampler = EpisodeSampler::new(ds, spec)?;
    Ok((0..count)
        .map(|i| Task::from(&sampler.sample(&mut rng.derive_index("episode", i as u64))))
        .collect())
}

impl TaskSource for EpisodeSource {
    fn train_batch(&self, iteration: usize, task_num: usize) -> Result<Vec<Task>> {
        let mut rng = Rng::new(self.seed).derive_index("meta_batch", iteration as u64);
        Ok(self
            .sampler
            .sample_batch(task_num, &mut rng)
            .iter()
            .map(Task::from)
            .collect())
    }

    fn eval_tasks(&self) -> Option<&[Task]> {
        (!self.eval.is_empty()).then_some(&self.eval[..])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub train_query_loss: f64,
    pub train_query_acc: Option<f64>,
    pub test_acc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetaTrainLog {
    pub records: Vec<IterationRecord>,
}

impl MetaTrainLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// CSV with columns `iteration, train_query_loss, train_query_acc,
    /// test_acc`; missing values are empty fields.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| MamlError::Io(e.to_string());
        out.write_record(["iteration", "train_query_loss", "train_query_acc", "test_acc"])
            .map_err(io)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            out.write_record([
                r.iteration.to_string(),
                r.train_query_loss.to_string(),
                opt(r.train_query_acc),
                opt(r.test_acc),
            ])
            .map_err(io)?;
        }
        out.flush().map_err(|e| MamlError::Io(e.to_string()))
    }

    /// Inverse of [`write_csv`](Self::write_csv).
    pub fn read_csv(r: impl std::io::Read) -> Result<Self> {
        let bad = |m: String| MamlError::Io(format!("training log: {m}"));
        let mut rd = csv::Reader::from_reader(r);
        let mut records = Vec::new();
        for row in rd.records() {
            let row = row.map_err(|e| bad(e.to_string()))?;
            if row.len() != 4 {
                return Err(bad(format!("expected 4 fields, got {}", row.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number {s:?}")));
            let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
            records.push(IterationRecord {
                iteration: row[0]
                    .parse()
                    .map_err(|_| bad(format!("bad iteration {:?}", &row[0])))?,
                train_query_loss: num(&row[1])?,
                train_query_acc: opt(&row[2])?,
                test_acc: opt(&row[3])?,
            });
        }
        Ok(Self { records })
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| MamlError::Io(format!("{}: {e}", path.display())))?;
        Self::read_csv(std::io::BufReader::new(file))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| MamlError::Io(format!("{}: {e}", path.display())))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Everything needed to continue meta-training: parameters, the Adam
/// state, and the index of the next outer step.
#[derive(Debug, Clone)]
pub struct MetaState {
    pub params: ParamSet,
    pub optimizer: OptimizerState,
}

impl MetaState {
    pub fn new(params: ParamSet, cfg: &MamlConfig) -> Self {
        Self {
            params,
            optimizer: OptimizerState::adam(cfg.meta_lr),
        }
    }

    pub fn next_iteration(&self) -> usize {
        self.optimizer.step_count as usize
    }

    /// Writes `params.bin` and `optimizer.bin` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| MamlError::Io(format!("{}: {e}", dir.display())))?;
        checkpoint::save(&dir.join("params.bin"), &self.params)?;
        checkpoint::save(&dir.join("optimizer.bin"), &self.optimizer.to_param_set(&self.params)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let params = checkpoint::load(&dir.join("params.bin"))?;
        let saved = checkpoint::load(&dir.join("optimizer.bin"))?;
        let optimizer = OptimizerState::adam_from_param_set(&saved, &params)?;
        Ok(Self { params, optimizer })
    }
}

/// Outer loop: from `state.next_iteration()` up to `cfg.meta_iterations`,
/// one Adam step per meta-batch. Stops early when a periodic meta-test
/// reaches `cfg.target_accuracy`.
pub fn meta_train(
    spec: &ModelSpec,
    cfg: &MamlConfig,
    state: MetaState,
    source: &dyn TaskSource,
) -> Result<(MetaState, MetaTrainLog)> {
    meta_train_with(spec, cfg, state, source, |_, _| Ok(()))
}

/// [`meta_train`] with a callback after every completed iteration; an
/// error from the callback aborts training.
pub fn meta_train_with(
    spec: &ModelSpec,
    cfg: &MamlConfig,
    mut state: MetaState,
    source: &dyn TaskSource,
    mut on_iteration: impl FnMut(&IterationRecord, &MetaState) -> Result<()>,
) -> Result<(MetaState, MetaTrainLog)> {
    cfg.validate()?;
    spec.check_params(&state.params)?;
    let mut log = MetaTrainLog::default();
    for it in state.next_iteration()..cfg.meta_iterations {
        let tasks = source.train_batch(it, cfg.task_num)?;
        let (grads, metrics) = meta_gradient(spec, &state.params, &tasks, cfg)?;
        let (params, opt) = state.optimizer.step(&state.params, &grads)?;
        state = MetaState { params, optimizer: opt };

        let mut test_acc = None;
        if cfg.eval_every > 0 && (it + 1) % cfg.eval_every == 0 {
            if let Some(eval) = source.eval_tasks() {
                test_acc = Some(meta_test(spec, &state.params, eval, cfg.inner_steps_test, cfg.inner_lr)?.accuracy);
            }
        }
        let record = IterationRecord {
            iteration: it,
            train_query_loss: metrics.loss,
            train_query_acc: metrics.accuracy,
            test_acc,
        };
        on_iteration(&record, &state)?;
        log.records.push(record);
        if let (Some(target), Some(acc)) = (cfg.target_accuracy, test_acc) {
            if acc >= target {
                break;
            }
        }
    }
    Ok((state, log))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub loss: f64,
    /// `None` for regression tasks.
    pub accuracy: Option<f64>,
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaTestResult {
    /// Mean query accuracy (0 for regression tasks).
    pub accuracy: f64,
    pub mean_loss: f64,
    pub episodes: Vec<EpisodeResult>,
}

/// Adapt a fresh copy of `params` to each task's support set with `steps`
/// plain gradient steps and score its query set.
pub fn meta_test(
    spec: &ModelSpec,
    params: &ParamSet,
    tasks: &[Task],
    steps: usize,
    inner_lr: f64,
) -> Result<MetaTestResult> {
    if tasks.is_empty() {
        return Err(MamlError::NoTasks);
    }
    let base = params.detach();
    let episodes = tasks
        .par_iter()
        .map(|t| {
            let fast = inner_adapt(spec, &base, &t.support, steps, inner_lr, false)?;
            let (loss, out) = t.query.loss(spec, &fast)?;
            let (predictions, labels) = match &t.query.targets {
                Targets::Classes(l) => (out.argmax_rows()?, l.clone()),
                Targets::Values(_) => (Vec::new(), Vec::new()),
            };
            Ok(EpisodeResult {
                loss: loss.item(),
                accuracy: t.query.accuracy(&out)?,
                predictions,
                labels,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = episodes.len() as f64;
    Ok(MetaTestResult {
        accuracy: episodes.iter().map(|e| e.accuracy.unwrap_or(0.0)).sum::<f64>() / n,
        mean_loss: episodes.iter().map(|e| e.loss).sum::<f64>() / n,
        episodes,
    })
}

#[cfg(test)]
mod tests {
    use super::super::Batch;
    use super::*;
    use crate::nn::init_params;
    use crate::tensor::Tensor;

    #[test]
    fn classifier_shapes() {
        let spec = conv_classifier([84, 84], 5, 32, 4, true).unwrap();
        assert_eq!(spec.output_dim(), Some(5));
        let small = conv_classifier([16, 16], 3, 4, 2, false).unwrap();
        let p = init_params(&small, &mut Rng::new(0));
        let x = Tensor::zeros(&[2, 3, 16, 16]).unwrap();
        let y = crate::nn::forward(&small, &p, &x, crate::nn::Mode::Eval).unwrap();
        assert_eq!(y.shape(), &[2, 3]);
    }

    /// Inputs are one-hot rows; the identity map already classifies them.
    fn onehot_task(n: usize) -> Task {
        let eye = Tensor::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 }).unwrap();
        let batch = Batch {
            inputs: eye,
            targets: Targets::Classes((0..n).collect()),
        };
        Task {
            support: batch.clone(),
            query: batch,
        }
    }

    fn linear(n: usize) -> ModelSpec {
        ModelSpec::new(InputShape::Vector(n), vec![Layer::SoftmaxHead { classes: n }]).unwrap()
    }

    #[test]
    fn perfect_model_scores_one() {
        let spec = linear(5);
        let p = ParamSet::from_entries(vec![
            (
                "layer0.weight".into(),
                Tensor::from_fn(&[5, 5], |i| if i / 5 == i % 5 { 10.0 } else { 0.0 }).unwrap(),
            ),
            ("layer0.bias".into(), Tensor::zeros(&[5]).unwrap()),
        ])
        .unwrap();
        let r = meta_test(&spec, &p, &[onehot_task(5)], 0, 0.01).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.episodes[0].predictions, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn random_classifier_near_chance() {
        // random weights, inputs that carry no label information
        let spec = linear(5);
        let mut rng = Rng::new(3);
        let mut total = 0.0;
        let n = 200;
        for _ in 0..n {
            let p = init_params(&spec, &mut rng);
            let x = Tensor::from_fn(&[15, 5], |_| rng.normal()).unwrap();
            let labels: Vec<usize> = (0..15).map(|_| rng.below(5)).collect();
            let t = Task {
                support: Batch {
                    inputs: x.clone(),
                    targets: Targets::Classes(labels.clone()),
                },
                query: Batch {
                    inputs: x,
                    targets: Targets::Classes(labels),
                },
            };
            total += meta_test(&spec, &p, &[t], 0, 0.01).unwrap().accuracy;
        }
        let acc = total / n as f64;
        assert!((acc - 0.2).abs() < 0.05, "{acc}");
    }

    struct Fixed(Vec<Task>);
    impl TaskSource for Fixed {
        fn train_batch(&self, it: usize, task_num: usize) -> Result<Vec<Task>> {
            Ok((0..task_num).map(|k| self.0[(it + k) % self.0.len()].clone()).collect())
        }
        fn eval_tasks(&self) -> Option<&[Task]> {
            Some(&self.0)
        }
    }

    #[test]
    fn training_log_resume_and_order_invariance() {
        let spec = linear(4);
        let tasks = vec![onehot_task(4)];
        let cfg = MamlConfig {
            meta_iterations: 6,
            meta_lr: 0.05,
            inner_steps_train: 1,
            task_num: 2,
            eval_every: 3,
            ..MamlConfig::default()
        };
        let init = init_params(&spec, &mut Rng::new(1));

        let zero = MamlConfig {
            meta_iterations: 0,
            ..cfg.clone()
        };
        let (s0, l0) = meta_train(&spec, &zero, MetaState::new(init.clone(), &zero), &Fixed(tasks.clone())).unwrap();
        assert!(s0.params.bit_eq(&init));
        assert!(l0.is_empty());

        let (full, log) = meta_train(&spec, &cfg, MetaState::new(init.clone(), &cfg), &Fixed(tasks.clone())).unwrap();
        assert_eq!(log.len(), 6);
        assert!(log.records.windows(2).all(|w| w[0].iteration < w[1].iteration));
        assert!(log.records[2].test_acc.is_some() && log.records[1].test_acc.is_none());

        let half = MamlConfig {
            meta_iterations: 3,
            ..cfg.clone()
        };
        let (mid, _) = meta_train(&spec, &half, MetaState::new(init.clone(), &cfg), &Fixed(tasks.clone())).unwrap();
        let dir = tempfile::tempdir().unwrap();
        mid.save(dir.path()).unwrap();
        let resumed = MetaState::load(dir.path()).unwrap();
        assert_eq!(resumed.next_iteration(), 3);
        let (end, rest) = meta_train(&spec, &cfg, resumed, &Fixed(tasks.clone())).unwrap();
        assert!(end.params.bit_eq(&full.params));
        assert_eq!(rest.records[..], log.records[3..]);

        let mut csv = Vec::new();
        log.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("iteration,train_query_loss,train_query_acc,test_acc\n"));
        assert_eq!(text.lines().count(), 7);
    }

    #[test]
    fn early_exit_on_target() {
        let spec = linear(3);
        let cfg = MamlConfig {
            meta_iterations: 100,
            eval_every: 1,
            target_accuracy: Some(0.0),
            ..MamlConfig::default()
        };
        let init = init_params(&spec, &mut Rng::new(2));
        let (_, log) = meta_train(&spec, &cfg, MetaState::new(init, &cfg), &Fixed(vec![onehot_task(3)])).unwrap();
        assert_eq!(log.len(), 1);
    }

    #[test]
    fn episode_order_does_not_change_accuracy() {
        let spec = linear(4);
        let p = init_params(&spec, &mut Rng::new(5));
        let mut rng = Rng::new(6);
        let tasks: Vec<Task> = (0..6)
            .map(|_| {
                let x = Tensor::from_fn(&[8, 4], |_| rng.normal()).unwrap();
                let labels: Vec<usize> = (0..8).map(|_| rng.below(4)).collect();
                Task {
                    support: Batch {
                        inputs: x.clone(),
                        targets: Targets::Classes(labels.clone()),
                    },
                    query: Batch {
                        inputs: x,
                        targets: Targets::Classes(labels),
                    },
                }
            })
            .collect();
        let a = meta_test(&spec, &p, &tasks, 3, 0.1).unwrap();
        let mut rev = tasks.clone();
        rev.reverse();
        let b = meta_test(&spec, &p, &rev, 3, 0.1).unwrap();
        assert!((a.accuracy - b.accuracy).abs() < 1e-12);
    }

    #[test]
    fn log_csv_round_trip() {
        let log = MetaTrainLog {
            records: vec![
                IterationRecord {
                    iteration: 0,
                    train_query_loss: 1.0 / 3.0,
                    train_query_acc: Some(0.2),
                    test_acc: None,
                },
                IterationRecord {
                    iteration: 1,
                    train_query_loss: 0.5,
                    train_query_acc: None,
                    test_acc: Some(0.75),
                },
            ],
        };
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        assert_eq!(MetaTrainLog::read_csv(buf.as_slice()).unwrap(), log);
        assert!(MetaTrainLog::read_csv("iteration,a,b,c\nx,1,,\n".as_bytes()).is_err());
    }
}
