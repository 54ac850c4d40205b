//! Transfer-learning baseline: a conv backbone pretrained on a pretext
//! dataset is frozen and used as a feature extractor for a small
//! dropout-regularized classification head.

use std::cmp::Ordering;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::nn::{
    check_early_stop, forward, init_params, l2_penalty, EarlyStoppingConfig, InputShape, Layer, Mode, ModelSpec,
    NnError, OptimizerKind, OptimizerState, ParamSet,
};
use crate::rng::Rng;
use crate::tensor::{grad, softmax_cross_entropy, Tape, Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum TransferError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid transfer config: {0}")]
    InvalidConfig(String),
    #[error("{0} set is empty")]
    Empty(&'static str),
    #[error("pretext and target datasets share class {0:?}")]
    ClassOverlap(String),
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("{0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, TransferError>;

/// Stride-2 3x3 conv + ReLU blocks followed by global average pooling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackboneSpec {
    pub image_size: [usize; 2],
    /// Output channels of each conv block.
    pub channels: Vec<usize>,
}

impl Default for BackboneSpec {
    fn default() -> Self {
        Self {
            image_size: [224, 224],
            channels: vec![16, 32, 32, 64],
        }
    }
}

impl BackboneSpec {
    pub fn feature_dim(&self) -> usize {
        self.channels.last().copied().unwrap_or(3)
    }

    fn layers(&self) -> Vec<Layer> {
        let mut layers = Vec::new();
        let mut c_in = 3;
        for &c in &self.channels {
            layers.push(Layer::Conv {
                c_in,
                c_out: c,
                kernel: 3,
                stride: 2,
                pad: 1,
            });
            layers.push(Layer::Relu);
            c_in = c;
        }
        layers.push(Layer::GlobalAvgPool);
        layers
    }

    fn input(&self) -> InputShape {
        InputShape::Image {
            channels: 3,
            height: self.image_size[0],
            width: self.image_size[1],
        }
    }

    pub fn model(&self) -> Result<ModelSpec> {
        if self.channels.is_empty() {
            return Err(TransferError::InvalidConfig(
                "backbone needs at least one conv block".into(),
            ));
        }
        Ok(ModelSpec::new(self.input(), self.layers())?)
    }

    /// Backbone plus a softmax layer; parameter names of the backbone part
    /// coincide with [`model`](Self::model)'s.
    fn with_classifier(&self, classes: usize) -> Result<ModelSpec> {
        let mut layers = self.layers();
        layers.push(Layer::SoftmaxHead { classes });
        Ok(ModelSpec::new(self.input(), layers)?)
    }
}

/// `[Dense, ReLU, Dropout]` per hidden width, then a softmax layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub feature_dim: usize,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub classes: usize,
}

impl HeadSpec {
    pub fn new(feature_dim: usize, classes: usize, cfg: &TransferConfig) -> Self {
        Self {
            feature_dim,
            hidden: cfg.head_hidden.clone(),
            dropout: cfg.dropout,
            classes,
        }
    }

    pub fn model(&self) -> Result<ModelSpec> {
        let mut layers = Vec::new();
        let mut d = self.feature_dim;
        for &h in &self.hidden {
            layers.push(Layer::Dense { input: d, output: h });
            layers.push(Layer::Relu);
            layers.push(Layer::Dropout { rate: self.dropout });
            d = h;
        }
        layers.push(Layer::SoftmaxHead { classes: self.classes });
        Ok(ModelSpec::new(InputShape::Vector(self.feature_dim), layers)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferConfig {
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub dropout: f64,
    pub l2_lambda: f64,
    pub early_stopping: EarlyStoppingConfig,
    /// Must stay true: only the head is trained.
    pub freeze_backbone: bool,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub head_hidden: Vec<usize>,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            optimizer: OptimizerKind::Adam,
            dropout: 0.7,
            l2_lambda: 2e-6,
            early_stopping: EarlyStoppingConfig::default(),
            freeze_backbone: true,
            max_epochs: 100,
            batch_size: 32,
            head_hidden: vec![128],
        }
    }
}

impl TransferConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TransferError::InvalidConfig(m));
        if self.lr.is_nan() || self.lr <= 0.0 {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.l2_lambda.is_nan() || self.l2_lambda < 0.0 {
            return bad(format!("l2_lambda {} is negative", self.l2_lambda));
        }
        if !self.freeze_backbone {
            return bad("freeze_backbone = false is not supported; the backbone is always frozen".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.head_hidden.contains(&0) {
            return bad("head_hidden widths must be positive".into());
        }
        Ok(())
    }

    /// Stable textual key used to break ties between grid entries.
    pub fn canonical_key(&self) -> String {
        format!(
            "{:e}|{:?}|{:e}|{:e}|{}|{:e}|{}|{}|{:?}",
            self.lr,
            self.optimizer,
            self.dropout,
            self.l2_lambda,
            self.early_stopping.patience,
            self.early_stopping.min_delta,
            self.max_epochs,
            self.batch_size,
            self.head_hidden
        )
    }
}

/// Pretext training settings for the backbone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            lr: 1e-3,
            batch_size: 16,
        }
    }
}

fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    match labels.iter().find(|&&l| l >= classes) {
        Some(&label) => Err(TransferError::Label { label, classes }),
        None => Ok(()),
    }
}

fn gather_rows(x: &Tensor, idx: &[usize]) -> Tensor {
    let per: usize = x.shape()[1..].iter().product();
    let mut data = Vec::with_capacity(idx.len() * per);
    for &i in idx {
        data.extend_from_slice(&x.data()[i * per..(i + 1) * per]);
    }
    let mut shape = x.shape().to_vec();
    shape[0] = idx.len();
    Tensor::new(&shape, data).expect("gathered rows")
}

/// One minibatch Adam/SGD step on cross-entropy plus L2.
fn train_step(
    spec: &ModelSpec,
    params: &ParamSet,
    opt: &OptimizerState,
    x: &Tensor,
    y: &[usize],
    l2: f64,
    rng: &mut Rng,
) -> Result<(ParamSet, OptimizerState, f64)> {
    let tape = Tape::new();
    let p = params.watch(&tape);
    let out = forward(spec, &p, x, Mode::Train(rng))?;
    let loss = softmax_cross_entropy(&out, y)?.add(&l2_penalty(&p, l2))?;
    let g = grad(&loss, &p.tensors(), false)?;
    let (next, state) = opt.step(params, &g)?;
    Ok((next, state, loss.item()))
}

/// Train backbone plus a throwaway softmax layer on `pretext`; return the
/// backbone parameters only.
pub fn pretrain_backbone(
    backbone: &BackboneSpec,
    pretext: &Dataset,
    target_classes: &[String],
    cfg: &PretrainConfig,
    rng: &mut Rng,
) -> Result<ParamSet> {
    if let Some(c) = pretext.class_names().iter().find(|c| target_classes.contains(c)) {
        return Err(TransferError::ClassOverlap(c.clone()));
    }
    if pretext.is_empty() {
        return Err(TransferError::Empty("pretext"));
    }
    let full = backbone.with_classifier(pretext.num_classes())?;
    let bb = backbone.model()?;
    let mut params = init_params(&full, rng);
    let [h, w] = backbone.image_size;
    let all: Vec<usize> = (0..pretext.len()).collect();
    let x = pretext.batch(&all, h, w);
    let y = pretext.labels();
    let mut opt = OptimizerState::adam(cfg.lr);
    for _ in 0..cfg.epochs {
        let mut order = all.clone();
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let xb = gather_rows(&x, chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
            let (p, o, _) = train_step(&full, &params, &opt, &xb, &yb, 0.0, rng)?;
            params = p;
            opt = o;
        }
    }
    let names: Vec<String> = bb.param_shapes().into_iter().map(|(n, _)| n).collect();
    Ok(params.filtered(|n| names.iter().any(|k| k == n)))
}

/// Eval-mode features `[n, feature_dim]` for an image batch `[n, 3, H, W]`.
pub fn extract_features(backbone: &BackboneSpec, params: &ParamSet, images: &Tensor) -> Result<Tensor> {
    let spec = backbone.model()?;
    spec.check_params(params)?;
    let n = images.shape().first().copied().unwrap_or(0);
    let fd = backbone.feature_dim();
    let frozen = params.detach();
    let chunks: Vec<Vec<usize>> = (0..n).collect::<Vec<_>>().chunks(64).map(<[usize]>::to_vec).collect();
    let parts = chunks
        .par_iter()
        .map(|idx| Ok(forward(&spec, &frozen, &gather_rows(images, idx), Mode::Eval)?.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Ok(Tensor::new(&[n, fd], parts.concat())?)
}

/// Features of every image in `ds`, resized to the backbone input size.
pub fn dataset_features(backbone: &BackboneSpec, params: &ParamSet, ds: &Dataset) -> Result<Tensor> {
    if ds.is_empty() {
        return Err(TransferError::Empty("image"));
    }
    let [h, w] = backbone.image_size;
    let all: Vec<usize> = (0..ds.len()).collect();
    extract_features(backbone, params, &ds.batch(&all, h, w))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were kept (lowest validation loss).
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| TransferError::Io(e.to_string());
        out.write_record(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])
            .map_err(io)?;
        for r in &self.epochs {
            out.write_record([
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.train_acc.to_string(),
                r.val_loss.to_string(),
                r.val_acc.to_string(),
            ])
            .map_err(io)?;
        }
        out.flush().map_err(|e| TransferError::Io(e.to_string()))
    }
}

/// Labeled feature rows.
#[derive(Debug, Clone)]
pub struct Features {
    pub x: Tensor,
    pub y: Vec<usize>,
}

impl Features {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Eval-mode loss and accuracy.
pub fn evaluate(spec: &ModelSpec, params: &ParamSet, data: &Features) -> Result<(f64, f64)> {
    let out = forward(spec, params, &data.x, Mode::Eval)?;
    let loss = softmax_cross_entropy(&out, &data.y)?.item();
    let pred = out.argmax_rows()?;
    let hits = pred.iter().zip(&data.y).filter(|(p, l)| p == l).count();
    Ok((loss, hits as f64 / data.len() as f64))
}

/// Eval-mode class predictions.
pub fn predict(spec: &ModelSpec, params: &ParamSet, x: &Tensor) -> Result<Vec<usize>> {
    Ok(forward(spec, params, x, Mode::Eval)?.argmax_rows()?)
}

/// Minibatch training of a head on frozen features, with early stopping on
/// validation loss. The weights of the best validation epoch are returned.
pub fn fit_head(
    head: &HeadSpec,
    train: &Features,
    val: &Features,
    cfg: &TransferConfig,
    rng: &mut Rng,
) -> Result<(ParamSet, TrainHistory)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(TransferError::Empty("training"));
    }
    if val.is_empty() {
        return Err(TransferError::Empty("validation"));
    }
    check_labels(&train.y, head.classes)?;
    check_labels(&val.y, head.classes)?;
    let spec = head.model()?;
    let mut params = init_params(&spec, rng);
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.lr);
    let mut history = TrainHistory::default();
    let mut best = (f64::INFINITY, params.clone());
    let mut val_losses = Vec::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.max_epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(cfg.batch_size) {
            let xb = gather_rows(&train.x, chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| train.y[i]).collect();
            let (p, o, _) = train_step(&spec, &params, &opt, &xb, &yb, cfg.l2_lambda, rng)?;
            params = p;
            opt = o;
        }
        let (train_loss, train_acc) = evaluate(&spec, &params, train)?;
        let (val_loss, val_acc) = evaluate(&spec, &params, val)?;
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            train_acc,
            val_loss,
            val_acc,
        });
        if val_loss < best.0 {
            best = (val_loss, params.clone());
            history.best_epoch = epoch;
        }
        val_losses.push(val_loss);
        if check_early_stop(&val_losses, &cfg.early_stopping) {
            history.stopped_early = true;
            break;
        }
    }
    Ok((best.1, history))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub index: usize,
    pub config: TransferConfig,
    pub val_accuracy: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub rows: Vec<GridRow>,
    pub selected: usize,
}

impl GridResult {
    pub fn best(&self) -> &GridRow {
        &self.rows[self.selected]
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| TransferError::Io(e.to_string());
        out.write_record([
            "index",
            "lr",
            "optimizer",
            "dropout",
            "l2_lambda",
            "patience",
            "min_delta",
            "max_epochs",
            "batch_size",
            "head_hidden",
            "val_accuracy",
            "selected",
        ])
        .map_err(io)?;
        for r in &self.rows {
            let c = &r.config;
            let hidden: Vec<String> = c.head_hidden.iter().map(usize::to_string).collect();
            out.write_record([
                r.index.to_string(),
                c.lr.to_string(),
                format!("{:?}", c.optimizer).to_lowercase(),
                c.dropout.to_string(),
                c.l2_lambda.to_string(),
                c.early_stopping.patience.to_string(),
                c.early_stopping.min_delta.to_string(),
                c.max_epochs.to_string(),
                c.batch_size.to_string(),
                hidden.join(" "),
                r.val_accuracy.to_string(),
                r.selected.to_string(),
            ])
            .map_err(io)?;
        }
        out.flush().map_err(|e| TransferError::Io(e.to_string()))
    }
}

/// Fit one head per config, each from `Rng::new(seed)`, and select the
/// highest validation accuracy. Ties go to the smallest canonical config
/// key, then the lowest index.
pub fn run_tuning_grid(
    configs: &[TransferConfig],
    feature_dim: usize,
    classes: usize,
    train: &Features,
    val: &Features,
    seed: u64,
) -> Result<GridResult> {
    if configs.is_empty() {
        return Err(TransferError::InvalidConfig("grid has no configurations".into()));
    }
    let accs = configs
        .par_iter()
        .map(|cfg| {
            let head = HeadSpec::new(feature_dim, classes, cfg);
            let (params, _) = fit_head(&head, train, val, cfg, &mut Rng::new(seed))?;
            Ok(evaluate(&head.model()?, &params, val)?.1)
        })
        .collect::<Result<Vec<f64>>>()?;
    let keys: Vec<String> = configs.iter().map(TransferConfig::canonical_key).collect();
    let selected = (0..configs.len())
        .min_by(|&a, &b| {
            accs[b]
                .partial_cmp(&accs[a])
                .unwrap_or(Ordering::Equal)
                .then_with(|| keys[a].cmp(&keys[b]))
                .then(a.cmp(&b))
        })
        .expect("non-empty grid");
    let rows = configs
        .iter()
        .enumerate()
        .map(|(index, config)| GridRow {
            index,
            config: config.clone(),
            val_accuracy: accs[index],
            selected: index == selected,
        })
        .collect();
    Ok(GridResult { rows, selected })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, SyntheticFloraSpec};

    fn blobs(n_per: usize, seed: u64) -> Features {
        let mut rng = Rng::new(seed);
        let centers = [[3.0, 0.0], [-3.0, 0.0], [0.0, 3.0]];
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (c, ctr) in centers.iter().enumerate() {
            for _ in 0..n_per {
                x.push(ctr[0] + 0.3 * rng.normal());
                x.push(ctr[1] + 0.3 * rng.normal());
                y.push(c);
            }
        }
        Features {
            x: Tensor::new(&[3 * n_per, 2], x).unwrap(),
            y,
        }
    }

    fn fast_cfg() -> TransferConfig {
        TransferConfig {
            lr: 0.01,
            dropout: 0.1,
            max_epochs: 60,
            batch_size: 16,
            head_hidden: vec![16],
            ..TransferConfig::default()
        }
    }

    #[test]
    fn separable_features_are_learned() {
        let cfg = fast_cfg();
        let head = HeadSpec::new(2, 3, &cfg);
        let (params, hist) = fit_head(&head, &blobs(30, 1), &blobs(10, 2), &cfg, &mut Rng::new(0)).unwrap();
        let (_, acc) = evaluate(&head.model().unwrap(), &params, &blobs(30, 1)).unwrap();
        assert_eq!(acc, 1.0);
        assert!(!hist.epochs.is_empty());
        let best = hist.epochs[hist.best_epoch].val_loss;
        assert!(hist.epochs.iter().all(|e| e.val_loss >= best));
    }

    #[test]
    fn fit_head_errors() {
        let cfg = fast_cfg();
        let head = HeadSpec::new(2, 3, &cfg);
        let empty = Features {
            x: Tensor::scalar(0.0),
            y: vec![],
        };
        assert!(matches!(
            fit_head(&head, &empty, &blobs(2, 1), &cfg, &mut Rng::new(0)),
            Err(TransferError::Empty(_))
        ));
        assert!(matches!(
            fit_head(&head, &blobs(2, 1), &empty, &cfg, &mut Rng::new(0)),
            Err(TransferError::Empty(_))
        ));
        let unfrozen = TransferConfig {
            freeze_backbone: false,
            ..cfg.clone()
        };
        assert!(fit_head(&head, &blobs(2, 1), &blobs(2, 1), &unfrozen, &mut Rng::new(0)).is_err());
        let mut bad = blobs(2, 1);
        bad.y[0] = 7;
        assert!(matches!(
            fit_head(&head, &bad, &blobs(2, 1), &cfg, &mut Rng::new(0)),
            Err(TransferError::Label { .. })
        ));
    }

    #[test]
    fn early_stopping_halts_a_stalled_run() {
        let cfg = TransferConfig {
            lr: 1e-9,
            max_epochs: 500,
            early_stopping: EarlyStoppingConfig {
                patience: 3,
                min_delta: 1e-4,
            },
            ..fast_cfg()
        };
        let head = HeadSpec::new(2, 3, &cfg);
        let (_, hist) = fit_head(&head, &blobs(10, 1), &blobs(5, 2), &cfg, &mut Rng::new(0)).unwrap();
        assert!(hist.stopped_early);
        assert!(hist.epochs.len() < 10);
    }

    fn tiny_backbone() -> BackboneSpec {
        BackboneSpec {
            image_size: [16, 16],
            channels: vec![4, 6],
        }
    }

    #[test]
    fn pretraining_returns_backbone_only_and_rejects_overlap() {
        let bb = tiny_backbone();
        let pretext = synth_generate(&SyntheticFloraSpec::pretext(16), 4, &mut Rng::new(1)).unwrap();
        let targets = SyntheticFloraSpec::flowers(16).class_names();
        let zero = PretrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let p0 = pretrain_backbone(&bb, &pretext, &targets, &zero, &mut Rng::new(2)).unwrap();
        bb.model().unwrap().check_params(&p0).unwrap();
        let full = bb.with_classifier(5).unwrap();
        let init = init_params(&full, &mut Rng::new(2));
        assert!(p0.bit_eq(&init.filtered(|n| p0.get(n).is_some())));
        assert_eq!(p0.len(), 4);

        let overlap = vec!["violet".to_string()];
        assert!(matches!(
            pretrain_backbone(&bb, &pretext, &overlap, &zero, &mut Rng::new(2)),
            Err(TransferError::ClassOverlap(c)) if c == "violet"
        ));
    }

    #[test]
    fn features_are_deterministic_and_backbone_untouched() {
        let bb = tiny_backbone();
        let pretext = synth_generate(&SyntheticFloraSpec::pretext(16), 4, &mut Rng::new(1)).unwrap();
        let params = pretrain_backbone(
            &bb,
            &pretext,
            &[],
            &PretrainConfig {
                epochs: 1,
                ..Default::default()
            },
            &mut Rng::new(3),
        )
        .unwrap();
        let before = params.checksum();
        let target = synth_generate(&SyntheticFloraSpec::flowers(16), 6, &mut Rng::new(4)).unwrap();
        let f1 = dataset_features(&bb, &params, &target).unwrap();
        let f2 = dataset_features(&bb, &params, &target).unwrap();
        assert!(f1.bit_eq(&f2));
        assert_eq!(f1.shape(), &[30, 6]);
        let cfg = fast_cfg();
        let head = HeadSpec::new(6, 5, &cfg);
        let data = Features {
            x: f1,
            y: target.labels(),
        };
        fit_head(&head, &data, &data, &cfg, &mut Rng::new(5)).unwrap();
        assert_eq!(params.checksum(), before);
    }

    #[test]
    fn grid_selection_and_tie_breaks() {
        let train = blobs(10, 1);
        let val = blobs(5, 2);
        let good = fast_cfg();
        let dead = TransferConfig {
            lr: 1e-9,
            max_epochs: 2,
            ..fast_cfg()
        };

        let single = run_tuning_grid(std::slice::from_ref(&good), 2, 3, &train, &val, 7).unwrap();
        assert_eq!(single.selected, 0);
        assert!(single.rows[0].selected);

        let dup = run_tuning_grid(&[good.clone(), good.clone()], 2, 3, &train, &val, 7).unwrap();
        assert_eq!(dup.rows[0].val_accuracy, dup.rows[1].val_accuracy);
        assert_eq!(dup.selected, 0);

        let a = run_tuning_grid(&[dead.clone(), good.clone()], 2, 3, &train, &val, 7).unwrap();
        let b = run_tuning_grid(&[good.clone(), dead.clone()], 2, 3, &train, &val, 7).unwrap();
        assert_eq!(a.best().config, b.best().config);
        assert_eq!(a.best().val_accuracy, b.best().val_accuracy);
        assert_eq!(a.rows[0].val_accuracy, b.rows[1].val_accuracy);

        let mut csv = Vec::new();
        a.write_csv(&mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 3);
    }

    #[test]
    fn config_validation() {
        TransferConfig::default().validate().unwrap();
        assert!(TransferConfig {
            dropout: 1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TransferConfig {
            lr: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
