use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use fewshot_core::data::{
    augment_expand, load_image_dir, save_image_tree, split, synth_generate, write_manifest, Dataset, ManifestRecord,
    SplitTag, Splits, SyntheticFloraSpec,
};
use fewshot_core::episodes::EpisodeSampler;
use fewshot_core::maml::{conv_classifier, meta_test, meta_train_with, EpisodeSource, MetaState, MetaTrainLog, Task};
use fewshot_core::metrics::{class_report, confusion, render_report, ReportFiles};
use fewshot_core::nn::{checkpoint, init_params_with, ModelSpec, ParamSet};
use fewshot_core::rng::derive_seed;
use fewshot_core::transfer::{
    dataset_features, fit_head, predict, pretrain_backbone, run_tuning_grid, Features, HeadSpec,
};
use fewshot_core::Rng;

use crate::config::{DatasetSource, ExperimentConfig};
use crate::plot::{plot_csv, Table};

fn stream(cfg: &ExperimentConfig, tag: &str) -> Rng {
    Rng::new(cfg.seed).derive(tag)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn synthetic_spec(cfg: &ExperimentConfig) -> Option<(SyntheticFloraSpec, usize)> {
    match cfg.dataset {
        DatasetSource::Synthetic { image_size, per_class } => {
            Some((SyntheticFloraSpec::flowers(image_size), per_class))
        }
        DatasetSource::Dir { .. } => None,
    }
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.dataset {
        DatasetSource::Dir { path } => Ok(load_image_dir(path)?),
        DatasetSource::Synthetic { .. } => {
            let (spec, per_class) = synthetic_spec(cfg).expect("synthetic source");
            Ok(synth_generate(&spec, per_class, &mut stream(cfg, "synth"))?)
        }
    }
}

fn split_dataset(cfg: &ExperimentConfig, ds: &Dataset, manifest: &Path) -> Result<Splits> {
    let splits = split(ds, &cfg.split, &mut stream(cfg, "split"))?;
    let mut records = Vec::new();
    for (tag, part) in [
        (SplitTag::Train, &splits.train),
        (SplitTag::Test, &splits.test),
        (SplitTag::Val, &splits.val),
    ] {
        for img in &part.images {
            records.push(ManifestRecord {
                path: img.source.clone().unwrap_or_default(),
                class_index: img.label,
                split: tag,
            });
        }
    }
    write_manifest(manifest, &records)?;
    Ok(splits)
}

fn pick_split(splits: Splits, name: &str) -> Result<Dataset> {
    match name {
        "test" => Ok(splits.test),
        "val" => Ok(splits.val),
        "train" => Ok(splits.train),
        other => bail!("unknown split {other:?}; expected test, val or train"),
    }
}

pub fn gen_synth(cfg: &ExperimentConfig) -> Result<()> {
    let Some((spec, per_class)) = synthetic_spec(cfg) else {
        bail!("gen-synth needs a synthetic dataset source");
    };
    let ds = synth_generate(&spec, per_class, &mut stream(cfg, "synth"))?;
    create_dir(&cfg.out)?;
    let files = save_image_tree(&ds, &cfg.out)?;
    println!(
        "wrote {} images in {} classes to {}",
        files.len(),
        ds.num_classes(),
        cfg.out.display()
    );
    Ok(())
}

pub fn augment(cfg: &ExperimentConfig) -> Result<()> {
    let ds = load_dataset(cfg)?;
    let out = augment_expand(&ds, &cfg.augmentation, &mut stream(cfg, "augment"))?;
    create_dir(&cfg.out)?;
    let files = save_image_tree(&out, &cfg.out)?;
    println!("wrote {} augmented images to {}", files.len(), cfg.out.display());
    Ok(())
}

fn maml_spec(cfg: &ExperimentConfig) -> Result<ModelSpec> {
    let ep = &cfg.maml.episode;
    Ok(conv_classifier(
        ep.image_size,
        ep.n_way,
        cfg.maml_model.width,
        cfg.maml_model.blocks,
        cfg.maml_model.batch_norm,
    )?)
}

pub fn maml_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out.join("maml")
}

pub fn train_maml(cfg: &ExperimentConfig, resume: bool) -> Result<()> {
    let dir = maml_dir(cfg);
    create_dir(&dir)?;
    let ds = load_dataset(cfg)?;
    let splits = split_dataset(cfg, &ds, &dir.join("split.tsv"))?;
    let spec = maml_spec(cfg)?;
    let mut source = EpisodeSource::new(&splits.train, &cfg.maml.episode, derive_seed(cfg.seed, "maml_episodes"))
        .context("meta-training split")?;
    if cfg.maml.eval_every > 0 {
        source = source
            .with_eval(&splits.test, cfg.maml_model.eval_episodes)
            .context("meta-test split")?;
    }
    let log_path = dir.join("train_log.csv");
    let (state, mut log) = if resume && dir.join("params.bin").exists() {
        let state = MetaState::load(&dir)?;
        spec.check_params(&state.params)
            .context("checkpoint does not match the configured model")?;
        let log = MetaTrainLog::load_csv(&log_path)?;
        if log.len() != state.next_iteration() {
            bail!(
                "log has {} rows but the checkpoint is at iteration {}",
                log.len(),
                state.next_iteration()
            );
        }
        (state, log)
    } else {
        let params = init_params_with(&spec, cfg.maml_model.init, &mut stream(cfg, "maml_init"));
        (MetaState::new(params, &cfg.maml), MetaTrainLog::default())
    };
    let start = state.next_iteration();
    let every = cfg.maml_model.checkpoint_every;
    let (state, _) = meta_train_with(&spec, &cfg.maml, state, &source, |rec, st| {
        log.records.push(*rec);
        if every > 0 && (rec.iteration + 1) % every == 0 {
            st.save(&dir)?;
            log.save_csv(&log_path)?;
        }
        Ok(())
    })?;
    state.save(&dir)?;
    log.save_csv(&log_path)?;
    plot_csv(
        &log_path,
        &dir.join("accuracy.svg"),
        "MAML accuracy per meta-step",
        "iteration",
        &["train_query_acc", "test_acc"],
    )?;
    let last = log.records.last();
    println!(
        "meta-trained iterations {start}..{}; last train query acc {}; last test acc {}; checkpoint {}",
        log.len(),
        fmt_opt(last.and_then(|r| r.train_query_acc)),
        fmt_opt(log.records.iter().rev().find_map(|r| r.test_acc)),
        dir.display()
    );
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

pub fn transfer_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out.join("transfer")
}

struct TransferData {
    backbone: ParamSet,
    train: Features,
    val: Features,
    test: Features,
    class_names: Vec<String>,
}

fn obtain_backbone(cfg: &ExperimentConfig, ds: &Dataset, dir: &Path) -> Result<ParamSet> {
    let spec = cfg.backbone.model()?;
    let params = if let Some(path) = &cfg.pretext.backbone {
        checkpoint::load(path)?
    } else {
        let size = match cfg.dataset {
            DatasetSource::Synthetic { image_size, .. } => image_size,
            DatasetSource::Dir { .. } => cfg.backbone.image_size[0],
        };
        let pretext_spec = SyntheticFloraSpec::pretext(size);
        if let Some((target, _)) = synthetic_spec(cfg) {
            pretext_spec.check_disjoint(&target)?;
        }
        let pretext = synth_generate(&pretext_spec, cfg.pretext.per_class, &mut stream(cfg, "pretext"))?;
        pretrain_backbone(
            &cfg.backbone,
            &pretext,
            ds.class_names(),
            &cfg.pretrain,
            &mut stream(cfg, "pretrain"),
        )?
    };
    spec.check_params(&params)
        .context("backbone checkpoint does not match the configured backbone")?;
    checkpoint::save(&dir.join("backbone.bin"), &params)?;
    Ok(params)
}

fn prepare_transfer(cfg: &ExperimentConfig, dir: &Path) -> Result<TransferData> {
    create_dir(dir)?;
    let ds = load_dataset(cfg)?;
    let splits = split_dataset(cfg, &ds, &dir.join("split.tsv"))?;
    let mut train = splits.train.clone();
    if cfg.augmentation.expansion_factor > 0 {
        let extra = augment_expand(&splits.train, &cfg.augmentation, &mut stream(cfg, "augment"))?;
        let images = train.images.into_iter().chain(extra.images).collect();
        train = Dataset::new(ds.class_names().to_vec(), images)?;
    }
    let mut val = splits.val.clone();
    let mut test = splits.test.clone();
    if cfg.augmentation.augment_eval_sets {
        val = augment_expand(&val, &cfg.augmentation, &mut stream(cfg, "augment_val"))?;
        test = augment_expand(&test, &cfg.augmentation, &mut stream(cfg, "augment_test"))?;
    }
    let backbone = obtain_backbone(cfg, &ds, dir)?;
    let feats = |d: &Dataset, what: &str| -> Result<Features> {
        Ok(Features {
            x: dataset_features(&cfg.backbone, &backbone, d).with_context(|| format!("{what} split"))?,
            y: d.labels(),
        })
    };
    Ok(TransferData {
        train: feats(&train, "train")?,
        val: feats(&val, "validation")?,
        test: feats(&test, "test")?,
        class_names: ds.class_names().to_vec(),
        backbone,
    })
}

fn write_report(
    preds: &[usize],
    labels: &[usize],
    names: &[String],
    dir: &Path,
    stem: &str,
) -> Result<(f64, ReportFiles)> {
    let cm = confusion(preds, labels, names.len())?.with_names(names.to_vec())?;
    let report = class_report(&cm);
    let files = render_report(&report, &cm, dir, stem)?;
    Ok((report.accuracy, files))
}

pub fn train_transfer(cfg: &ExperimentConfig) -> Result<()> {
    let dir = transfer_dir(cfg);
    let data = prepare_transfer(cfg, &dir)?;
    let before = data.backbone.checksum();
    let head = HeadSpec::new(cfg.backbone.feature_dim(), data.class_names.len(), &cfg.transfer);
    let (head_params, history) = fit_head(&head, &data.train, &data.val, &cfg.transfer, &mut stream(cfg, "head"))?;
    let after = data.backbone.checksum();
    if before != after {
        bail!("backbone parameters changed while fitting the head");
    }
    let model = data
        .backbone
        .prefixed("backbone.")
        .merged(&head_params.prefixed("head."))?;
    checkpoint::save(&dir.join("model.bin"), &model)?;
    let hist_path = dir.join("history.csv");
    history.write_csv(fs::File::create(&hist_path).with_context(|| format!("creating {}", hist_path.display()))?)?;
    plot_csv(
        &hist_path,
        &dir.join("history.svg"),
        "Head training",
        "epoch",
        &["train_acc", "val_acc", "train_loss", "val_loss"],
    )?;
    let preds = predict(&head.model()?, &head_params, &data.test.x)?;
    let (acc, files) = write_report(&preds, &data.test.y, &data.class_names, &dir, "report_test")?;
    let log = format!(
        "backbone_checksum_before {before}\nbackbone_checksum_after {after}\nfrozen {}\nepochs {}\nbest_epoch {}\nstopped_early {}\ntest_accuracy {acc}\n",
        before == after,
        history.epochs.len(),
        history.best_epoch,
        history.stopped_early
    );
    fs::write(dir.join("train.log"), log)?;
    println!(
        "head trained for {} epochs (best {}); test accuracy {acc:.4}; report {}",
        history.epochs.len(),
        history.best_epoch,
        files.text.display()
    );
    Ok(())
}

pub fn grid(cfg: &ExperimentConfig) -> Result<()> {
    let dir = transfer_dir(cfg);
    let data = prepare_transfer(cfg, &dir)?;
    let configs = cfg.grid_configs();
    let result = run_tuning_grid(
        &configs,
        cfg.backbone.feature_dim(),
        data.class_names.len(),
        &data.train,
        &data.val,
        derive_seed(cfg.seed, "grid"),
    )?;
    let path = dir.join("grid.csv");
    result.write_csv(fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?)?;
    let best = result.best();
    println!(
        "{} configurations; selected #{} (lr {}, dropout {}) with validation accuracy {:.4}; table {}",
        result.rows.len(),
        best.index,
        best.config.lr,
        best.config.dropout,
        best.val_accuracy,
        path.display()
    );
    Ok(())
}

pub fn eval(cfg: &ExperimentConfig, checkpoint_path: &Path, split_name: &str) -> Result<()> {
    let params = checkpoint::load(checkpoint_path)?;
    let out = cfg.out.join("eval");
    create_dir(&out)?;
    let is_transfer = params
        .names()
        .iter()
        .all(|n| n.starts_with("backbone.") || n.starts_with("head."));
    if is_transfer && !params.is_empty() {
        eval_transfer(cfg, &params, split_name, &out)
    } else {
        eval_maml(cfg, &params, split_name, &out)
    }
}

fn eval_transfer(cfg: &ExperimentConfig, params: &ParamSet, split_name: &str, out: &Path) -> Result<()> {
    let backbone = params
        .filtered(|n| n.starts_with("backbone."))
        .strip_prefix("backbone.");
    let head_params = params.filtered(|n| n.starts_with("head.")).strip_prefix("head.");
    cfg.backbone
        .model()?
        .check_params(&backbone)
        .context("checkpoint does not match the configured backbone")?;
    let ds = load_dataset(cfg)?;
    let head = HeadSpec::new(cfg.backbone.feature_dim(), ds.num_classes(), &cfg.transfer);
    let head_spec = head.model()?;
    head_spec
        .check_params(&head_params)
        .context("checkpoint does not match the configured head")?;
    let part = pick_split(split(&ds, &cfg.split, &mut stream(cfg, "split"))?, split_name)?;
    let x = dataset_features(&cfg.backbone, &backbone, &part)?;
    let preds = predict(&head_spec, &head_params, &x)?;
    let (acc, files) = write_report(
        &preds,
        &part.labels(),
        ds.class_names(),
        out,
        &format!("transfer_{split_name}"),
    )?;
    println!(
        "transfer {split_name} accuracy {acc:.4}; report {}",
        files.text.display()
    );
    Ok(())
}

fn eval_maml(cfg: &ExperimentConfig, params: &ParamSet, split_name: &str, out: &Path) -> Result<()> {
    let spec = maml_spec(cfg)?;
    spec.check_params(params)
        .context("checkpoint does not match the configured MAML model")?;
    let ds = load_dataset(cfg)?;
    let part = pick_split(split(&ds, &cfg.split, &mut stream(cfg, "split"))?, split_name)?;
    let sampler = EpisodeSampler::new(&part, &cfg.maml.episode).with_context(|| format!("{split_name} split"))?;
    let base = stream(cfg, "eval_episodes");
    let episodes: Vec<_> = (0..cfg.maml_model.eval_episodes.max(1))
        .map(|i| sampler.sample(&mut base.derive_index("episode", i as u64)))
        .collect();
    let tasks: Vec<Task> = episodes.iter().map(Task::from).collect();
    let result = meta_test(&spec, params, &tasks, cfg.maml.inner_steps_test, cfg.maml.inner_lr)?;
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    for (ep, res) in episodes.iter().zip(&result.episodes) {
        preds.extend(res.predictions.iter().map(|&p| ep.class_map[p]));
        labels.extend(res.labels.iter().map(|&l| ep.class_map[l]));
    }
    let (_, files) = write_report(&preds, &labels, ds.class_names(), out, &format!("maml_{split_name}"))?;
    println!(
        "MAML {split_name}: {} episodes, {} adaptation steps, mean accuracy {:.4}; report {}",
        tasks.len(),
        cfg.maml.inner_steps_test,
        result.accuracy,
        files.text.display()
    );
    Ok(())
}

/// Re-render plots from existing logs and collect report summaries.
pub fn report(cfg: &ExperimentConfig) -> Result<()> {
    let mut summary = String::new();
    let maml_log = maml_dir(cfg).join("train_log.csv");
    if maml_log.exists() {
        let svg = maml_dir(cfg).join("accuracy.svg");
        plot_csv(
            &maml_log,
            &svg,
            "MAML accuracy per meta-step",
            "iteration",
            &["train_query_acc", "test_acc"],
        )?;
        let t = Table::read(&maml_log)?;
        summary.push_str(&format!(
            "maml: {} iterations logged; plot {}\n",
            t.rows.len(),
            svg.display()
        ));
    }
    let hist = transfer_dir(cfg).join("history.csv");
    if hist.exists() {
        let svg = transfer_dir(cfg).join("history.svg");
        plot_csv(
            &hist,
            &svg,
            "Head training",
            "epoch",
            &["train_acc", "val_acc", "train_loss", "val_loss"],
        )?;
        let t = Table::read(&hist)?;
        summary.push_str(&format!(
            "transfer: {} epochs logged; plot {}\n",
            t.rows.len(),
            svg.display()
        ));
    }
    let mut reports: Vec<PathBuf> = [transfer_dir(cfg), cfg.out.join("eval")]
        .iter()
        .filter_map(|d| fs::read_dir(d).ok())
        .flatten()
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv") && p.with_extension("txt").exists())
        .collect();
    reports.sort();
    for p in &reports {
        let mut rd = csv::Reader::from_path(p)?;
        for row in rd.records() {
            let row = row?;
            if &row[0] == "weighted avg" {
                summary.push_str(&format!(
                    "{}: weighted recall (accuracy) {} f1 {}\n",
                    p.display(),
                    &row[2],
                    &row[3]
                ));
            }
        }
    }
    if summary.is_empty() {
        return Err(anyhow!("no training logs or reports found under {}", cfg.out.display()));
    }
    let path = cfg.out.join("summary.txt");
    fs::write(&path, &summary).with_context(|| format!("writing {}", path.display()))?;
    print!("{summary}");
    Ok(())
}
