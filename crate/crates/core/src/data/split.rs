use serde::{Deserialize, Serialize};

use super::{DataError, Dataset, Result};
use crate::rng::Rng;

/// How a dataset is partitioned into train / test / validation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum SplitSpec {
    /// Per-class fractions. Test and validation counts are rounded down and
    /// the remainder goes to train.
    Fractions { train: f64, test: f64, val: f64 },
    /// Absolute counts per class; leftover images are unused.
    PerClass { train: usize, test: usize, val: usize },
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Fractions {
            train: 0.70,
            test: 0.25,
            val: 0.05,
        }
    }
}

impl SplitSpec {
    /// The small-subset configuration: 25 train, 5 test, 25 validation per class.
    pub fn subset() -> Self {
        SplitSpec::PerClass {
            train: 25,
            test: 5,
            val: 25,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let SplitSpec::Fractions { train, test, val } = *self {
            if [train, test, val].iter().any(|f| !(0.0..=1.0).contains(f)) {
                return Err(DataError::InvalidSplit(format!(
                    "fractions {train}/{test}/{val} must lie in [0, 1]"
                )));
            }
            if (train + test + val - 1.0).abs() > 1e-9 {
                return Err(DataError::InvalidSplit(format!(
                    "fractions {train}/{test}/{val} sum to {}, not 1",
                    train + test + val
                )));
            }
        }
        Ok(())
    }

    /// `(train, test, val)` counts for a class of `n` images.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        match *self {
            SplitSpec::Fractions { test, val, .. } => {
                let t = (n as f64 * test + 1e-9).floor() as usize;
                let v = (n as f64 * val + 1e-9).floor() as usize;
                (n - t - v, t, v)
            }
            SplitSpec::PerClass { train, test, val } => (train, test, val),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub test: Dataset,
    pub val: Dataset,
}

/// Per-class stratified random partition. Within each output, images keep
/// class order, and within a class the shuffled order.
pub fn split(ds: &Dataset, spec: &SplitSpec, rng: &mut Rng) -> Result<Splits> {
    spec.validate()?;
    let mut parts: [Vec<usize>; 3] = Default::default();
    for (class, mut idx) in ds.indices_by_class().into_iter().enumerate() {
        let (tr, te, va) = spec.counts(idx.len());
        if tr + te + va > idx.len() {
            return Err(DataError::InvalidSplit(format!(
                "class {:?} has {} images but the split needs {}",
                ds.class_names()[class],
                idx.len(),
                tr + te + va
            )));
        }
        rng.shuffle(&mut idx);
        parts[0].extend_from_slice(&idx[..tr]);
        parts[1].extend_from_slice(&idx[tr..tr + te]);
        parts[2].extend_from_slice(&idx[tr + te..tr + te + va]);
    }
    let take = |ids: &[usize]| {
        Dataset::new(
            ds.class_names().to_vec(),
            ids.iter().map(|&i| ds.images[i].clone()).collect(),
        )
    };
    Ok(Splits {
        train: take(&parts[0])?,
        test: take(&parts[1])?,
        val: take(&parts[2])?,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{LabeledImage, ValueRange};
    use super::*;
    use proptest::prelude::{any, prop_assert_eq, proptest};

    fn dataset(per_class: &[usize]) -> Dataset {
        let mut images = Vec::new();
        for (label, &n) in per_class.iter().enumerate() {
            for i in 0..n {
                let img = LabeledImage::new(1, 1, vec![0.0; 3], ValueRange::Raw, label, format!("c{label}")).unwrap();
                images.push(img.with_source(format!("c{label}/{i}")));
            }
        }
        let names = (0..per_class.len()).map(|c| format!("c{c}")).collect();
        Dataset::new(names, images).unwrap()
    }

    fn sources(ds: &Dataset) -> Vec<String> {
        ds.images.iter().map(|i| i.source.clone().unwrap()).collect()
    }

    #[test]
    fn default_fractions_on_hundred_per_class() {
        let ds = dataset(&[100; 5]);
        let s = split(&ds, &SplitSpec::default(), &mut Rng::new(0)).unwrap();
        assert_eq!(s.train.class_counts(), vec![70; 5]);
        assert_eq!(s.test.class_counts(), vec![25; 5]);
        assert_eq!(s.val.class_counts(), vec![5; 5]);
    }

    #[test]
    fn subset_mode_leaves_images_unused() {
        let ds = dataset(&[100; 5]);
        let s = split(&ds, &SplitSpec::subset(), &mut Rng::new(0)).unwrap();
        assert_eq!(s.train.class_counts(), vec![25; 5]);
        assert_eq!(s.test.class_counts(), vec![5; 5]);
        assert_eq!(s.val.class_counts(), vec![25; 5]);
        assert_eq!(ds.len() - s.train.len() - s.test.len() - s.val.len(), 5 * 45);
    }

    #[test]
    fn subset_larger_than_class_is_an_error() {
        let ds = dataset(&[100, 40]);
        let err = split(&ds, &SplitSpec::subset(), &mut Rng::new(0)).unwrap_err();
        assert!(err.to_string().contains("\"c1\""), "{err}");
    }

    #[test]
    fn bad_fractions_rejected() {
        let spec = SplitSpec::Fractions {
            train: 0.7,
            test: 0.2,
            val: 0.2,
        };
        assert!(split(&dataset(&[3]), &spec, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn same_seed_same_partition() {
        let ds = dataset(&[30, 17, 9]);
        let a = split(&ds, &SplitSpec::default(), &mut Rng::new(4)).unwrap();
        let b = split(&ds, &SplitSpec::default(), &mut Rng::new(4)).unwrap();
        assert_eq!(a, b);
        let c = split(&ds, &SplitSpec::default(), &mut Rng::new(5)).unwrap();
        assert_ne!(sources(&a.train), sources(&c.train));
    }

    proptest! {
        #[test]
        fn fraction_split_is_exhaustive_and_disjoint(
            counts in proptest::collection::vec(0usize..40, 1..6),
            seed in any::<u64>(),
        ) {
            let ds = dataset(&counts);
            let s = split(&ds, &SplitSpec::default(), &mut Rng::new(seed)).unwrap();
            let mut all: Vec<String> = [&s.train, &s.test, &s.val].iter().flat_map(|d| sources(d)).collect();
            all.sort();
            let mut orig = sources(&ds);
            orig.sort();
            prop_assert_eq!(all, orig);
            for (c, &n) in counts.iter().enumerate() {
                let t = n * 25 / 100;
                let v = n * 5 / 100;
                prop_assert_eq!(s.test.class_counts()[c], t);
                prop_assert_eq!(s.val.class_counts()[c], v);
                prop_assert_eq!(s.train.class_counts()[c], n - t - v);
            }
        }
    }
}
