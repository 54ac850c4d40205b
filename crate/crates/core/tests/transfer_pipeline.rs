use fewshot_core::data::{split, synth_generate, Dataset, SplitSpec, SyntheticFloraSpec};
use fewshot_core::nn::ParamSet;
use fewshot_core::transfer::{
    dataset_features, evaluate, fit_head, pretrain_backbone, BackboneSpec, Features, HeadSpec, PretrainConfig,
    TransferConfig,
};
use fewshot_core::Rng;

fn backbone() -> BackboneSpec {
    BackboneSpec {
        image_size: [24, 24],
        channels: vec![8, 16],
    }
}

fn features(bb: &BackboneSpec, p: &ParamSet, ds: &Dataset) -> Features {
    Features {
        x: dataset_features(bb, p, ds).unwrap(),
        y: ds.labels(),
    }
}

fn head_cfg() -> TransferConfig {
    TransferConfig {
        lr: 0.01,
        dropout: 0.2,
        max_epochs: 60,
        head_hidden: vec![32],
        ..TransferConfig::default()
    }
}

#[test]
fn pretrained_backbone_beats_chance_on_held_out_pretext_images() {
    let bb = backbone();
    let spec = SyntheticFloraSpec::pretext(24);
    let pretext = synth_generate(&spec, 40, &mut Rng::new(1)).unwrap();
    let parts = split(
        &pretext,
        &SplitSpec::PerClass {
            train: 25,
            test: 10,
            val: 5,
        },
        &mut Rng::new(2),
    )
    .unwrap();
    let cfg = PretrainConfig {
        epochs: 5,
        ..Default::default()
    };
    let targets = SyntheticFloraSpec::flowers(24).class_names();
    let p = pretrain_backbone(&bb, &parts.train, &targets, &cfg, &mut Rng::new(3)).unwrap();

    let head = HeadSpec::new(bb.feature_dim(), 5, &head_cfg());
    let train = features(&bb, &p, &parts.train);
    let val = features(&bb, &p, &parts.val);
    let (hp, _) = fit_head(&head, &train, &val, &head_cfg(), &mut Rng::new(4)).unwrap();
    let (_, acc) = evaluate(&head.model().unwrap(), &hp, &features(&bb, &p, &parts.test)).unwrap();
    assert!(acc > 0.4, "held-out pretext accuracy {acc}");
}

fn mean_distance(a: &[&[f64]], b: &[&[f64]], same: bool) -> f64 {
    let mut total = 0.0;
    let mut n = 0usize;
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            if same && i >= j {
                continue;
            }
            total += x.iter().zip(*y).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
            n += 1;
        }
    }
    total / n as f64
}

#[test]
fn features_separate_target_classes() {
    let bb = backbone();
    let pretext = synth_generate(&SyntheticFloraSpec::pretext(24), 30, &mut Rng::new(5)).unwrap();
    let p = pretrain_backbone(
        &bb,
        &pretext,
        &[],
        &PretrainConfig {
            epochs: 3,
            ..Default::default()
        },
        &mut Rng::new(6),
    )
    .unwrap();
    let target = synth_generate(&SyntheticFloraSpec::flowers(24), 100, &mut Rng::new(7)).unwrap();
    let f = dataset_features(&bb, &p, &target).unwrap();
    let d = bb.feature_dim();
    let rows: Vec<&[f64]> = f.data().chunks(d).collect();
    let by_class = |c: usize| -> Vec<&[f64]> {
        rows.iter()
            .zip(target.labels())
            .filter(|(_, l)| *l == c)
            .map(|(r, _)| *r)
            .collect()
    };
    // daisy vs sunflower
    let (a, b) = (by_class(0), by_class(3));
    let within = (mean_distance(&a, &a, true) + mean_distance(&b, &b, true)) / 2.0;
    let between = mean_distance(&a, &b, false);
    assert!(between > within, "between {between} within {within}");
}

#[test]
fn identical_images_give_identical_feature_rows() {
    let bb = backbone();
    let p = pretrain_backbone(
        &bb,
        &synth_generate(&SyntheticFloraSpec::pretext(24), 2, &mut Rng::new(8)).unwrap(),
        &[],
        &PretrainConfig {
            epochs: 0,
            ..Default::default()
        },
        &mut Rng::new(9),
    )
    .unwrap();
    let one = synth_generate(&SyntheticFloraSpec::flowers(24), 1, &mut Rng::new(10)).unwrap();
    let twice = Dataset::new(
        one.class_names().to_vec(),
        vec![one.images[0].clone(), one.images[0].clone()],
    )
    .unwrap();
    let f = dataset_features(&bb, &p, &twice).unwrap();
    let d = bb.feature_dim();
    assert_eq!(f.shape(), &[2, d]);
    assert_eq!(f.data()[..d], f.data()[d..]);
}
