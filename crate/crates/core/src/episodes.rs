//! N-way K-shot episodes: a labeled support set for adaptation and a
//! disjoint query set for evaluation.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum EpisodeError {
    #[error("invalid episode spec: {0}")]
    InvalidSpec(String),
    #[error("dataset has {available} classes but episodes need {needed}")]
    TooFewClasses { available: usize, needed: usize },
    #[error("class {class:?} has {available} images but episodes need {needed}")]
    TooFewImages {
        class: String,
        available: usize,
        needed: usize,
    },
    #[error("episode invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T> = std::result::Result<T, EpisodeError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeSpec {
    pub n_way: usize,
    pub k_shot: usize,
    pub k_query: usize,
    /// `[height, width]` every image is resized to.
    pub image_size: [usize; 2],
}

impl Default for EpisodeSpec {
    fn default() -> Self {
        Self {
            n_way: 5,
            k_shot: 1,
            k_query: 15,
            image_size: [84, 84],
        }
    }
}

impl EpisodeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_way < 2 {
            return Err(EpisodeError::InvalidSpec(format!("n_way {} is below 2", self.n_way)));
        }
        if self.k_shot == 0 || self.k_query == 0 {
            return Err(EpisodeError::InvalidSpec(
                "k_shot and k_query must be at least 1".into(),
            ));
        }
        if self.image_size.contains(&0) {
            return Err(EpisodeError::InvalidSpec("image_size must be positive".into()));
        }
        Ok(())
    }

    pub fn per_class(&self) -> usize {
        self.k_shot + self.k_query
    }
}

/// One support or query example.
#[derive(Debug, Clone)]
pub struct EpisodeItem {
    /// `[3, H, W]` in `[0, 1]`.
    pub image: Tensor,
    /// Episode-local label in `0..n_way`.
    pub label: usize,
    /// Index of the image in the source dataset.
    pub source_index: usize,
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub support: Vec<EpisodeItem>,
    pub query: Vec<EpisodeItem>,
    /// `class_map[local] = global class index`.
    pub class_map: Vec<usize>,
}

fn stack(items: &[EpisodeItem]) -> (Tensor, Vec<usize>) {
    let shape = items[0].image.shape().to_vec();
    let mut data = Vec::with_capacity(items.len() * items[0].image.numel());
    for it in items {
        data.extend_from_slice(it.image.data());
    }
    let mut full = vec![items.len()];
    full.extend(shape);
    let t = Tensor::new(&full, data).expect("stacked episode images");
    (t, items.iter().map(|i| i.label).collect())
}

impl Episode {
    pub fn n_way(&self) -> usize {
        self.class_map.len()
    }

    /// Support images as one `[N, 3, H, W]` batch plus labels.
    pub fn support_batch(&self) -> (Tensor, Vec<usize>) {
        stack(&self.support)
    }

    pub fn query_batch(&self) -> (Tensor, Vec<usize>) {
        stack(&self.query)
    }

    /// Checks the episode contract against `spec`.
    pub fn validate(&self, spec: &EpisodeSpec) -> Result<()> {
        let bad = |m: String| Err(EpisodeError::Invariant(m));
        if self.class_map.len() != spec.n_way {
            return bad(format!("{} classes, expected {}", self.class_map.len(), spec.n_way));
        }
        let mut seen = self.class_map.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != spec.n_way {
            return bad("class_map repeats a global class".into());
        }
        for (set, k, name) in [
            (&self.support, spec.k_shot, "support"),
            (&self.query, spec.k_query, "query"),
        ] {
            let mut counts = vec![0; spec.n_way];
            for it in set.iter() {
                if it.label >= spec.n_way {
                    return bad(format!("{name} label {} out of range", it.label));
                }
                if it.image.shape() != [3, spec.image_size[0], spec.image_size[1]] {
                    return bad(format!("{name} image has shape {:?}", it.image.shape()));
                }
                counts[it.label] += 1;
            }
            if counts.iter().any(|&c| c != k) {
                return bad(format!("{name} per-class counts {counts:?}, expected {k} each"));
            }
        }
        let mut sources: Vec<usize> = self.support.iter().chain(&self.query).map(|i| i.source_index).collect();
        sources.sort_unstable();
        let n = sources.len();
        sources.dedup();
        if sources.len() != n {
            return bad("an image appears twice in the episode".into());
        }
        Ok(())
    }
}

/// Pre-resized images grouped by class, for sampling many episodes from
/// one dataset without redoing the conversion.
#[derive(Debug, Clone)]
pub struct EpisodeSampler {
    spec: EpisodeSpec,
    images: Vec<Tensor>,
    by_class: Vec<Vec<usize>>,
}

impl EpisodeSampler {
    pub fn new(ds: &Dataset, spec: &EpisodeSpec) -> Result<Self> {
        spec.validate()?;
        if ds.num_classes() < spec.n_way {
            return Err(EpisodeError::TooFewClasses {
                available: ds.num_classes(),
                needed: spec.n_way,
            });
        }
        let by_class = ds.indices_by_class();
        if let Some((c, idx)) = by_class
            .iter()
            .enumerate()
            .find(|(_, idx)| idx.len() < spec.per_class())
        {
            return Err(EpisodeError::TooFewImages {
                class: ds.class_names()[c].clone(),
                available: idx.len(),
                needed: spec.per_class(),
            });
        }
        let [h, w] = spec.image_size;
        let images = ds.images.iter().map(|img| img.to_chw(h, w)).collect();
        Ok(Self {
            spec: *spec,
            images,
            by_class,
        })
    }

    pub fn spec(&self) -> &EpisodeSpec {
        &self.spec
    }

    /// Classes uniformly without replacement, in random local order; then
    /// for each class `k_shot + k_query` distinct images, the first
    /// `k_shot` going to support.
    pub fn sample(&self, rng: &mut Rng) -> Episode {
        let s = &self.spec;
        let class_map = rng.sample_indices(self.by_class.len(), s.n_way);
        let mut support = Vec::with_capacity(s.n_way * s.k_shot);
        let mut query = Vec::with_capacity(s.n_way * s.k_query);
        for (local, &global) in class_map.iter().enumerate() {
            let pool = &self.by_class[global];
            let picks = rng.sample_indices(pool.len(), s.per_class());
            for (j, &p) in picks.iter().enumerate() {
                let idx = pool[p];
                let item = EpisodeItem {
                    image: self.images[idx].clone(),
                    label: local,
                    source_index: idx,
                };
                if j < s.k_shot {
                    support.push(item);
                } else {
                    query.push(item);
                }
            }
        }
        Episode {
            support,
            query,
            class_map,
        }
    }

    /// `task_num` episodes, episode `i` drawn from the sub-stream
    /// `rng.derive_index("episode", i)`. Advances `rng` by one draw.
    pub fn sample_batch(&self, task_num: usize, rng: &mut Rng) -> Vec<Episode> {
        let base = rng.fork();
        (0..task_num)
            .map(|i| self.sample(&mut base.derive_index("episode", i as u64)))
            .collect()
    }
}

pub fn sample_episode(ds: &Dataset, spec: &EpisodeSpec, rng: &mut Rng) -> Result<Episode> {
    Ok(EpisodeSampler::new(ds, spec)?.sample(rng))
}

pub fn sample_meta_batch(ds: &Dataset, spec: &EpisodeSpec, task_num: usize, rng: &mut Rng) -> Result<Vec<Episode>> {
    Ok(EpisodeSampler::new(ds, spec)?.sample_batch(task_num, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{LabeledImage, ValueRange};

    fn dataset(per_class: &[usize]) -> Dataset {
        let mut images = Vec::new();
        for (label, &n) in per_class.iter().enumerate() {
            for i in 0..n {
                let v = ((label * 31 + i * 7) % 256) as f64;
                images.push(LabeledImage::new(4, 4, vec![v; 48], ValueRange::Raw, label, format!("c{label}")).unwrap());
            }
        }
        Dataset::new((0..per_class.len()).map(|c| format!("c{c}")).collect(), images).unwrap()
    }

    fn small_spec() -> EpisodeSpec {
        EpisodeSpec {
            image_size: [4, 4],
            ..EpisodeSpec::default()
        }
    }

    #[test]
    fn five_way_one_shot_sizes() {
        let ds = dataset(&[20; 6]);
        let ep = sample_episode(&ds, &small_spec(), &mut Rng::new(1)).unwrap();
        assert_eq!(ep.support.len(), 5);
        assert_eq!(ep.query.len(), 75);
        ep.validate(&small_spec()).unwrap();
        let (x, y) = ep.query_batch();
        assert_eq!(x.shape(), &[75, 3, 4, 4]);
        assert_eq!(y.len(), 75);
    }

    #[test]
    fn deficient_class_is_named() {
        let ds = dataset(&[20, 20, 10, 20, 20]);
        let err = sample_episode(&ds, &small_spec(), &mut Rng::new(0)).unwrap_err();
        assert!(matches!(&err, EpisodeError::TooFewImages { class, available: 10, needed: 16 } if class == "c2"));
        let err = sample_episode(&dataset(&[20; 3]), &small_spec(), &mut Rng::new(0)).unwrap_err();
        assert!(matches!(
            err,
            EpisodeError::TooFewClasses {
                available: 3,
                needed: 5
            }
        ));
    }

    #[test]
    fn same_seed_same_episode() {
        let ds = dataset(&[20; 7]);
        let a = sample_episode(&ds, &small_spec(), &mut Rng::new(9)).unwrap();
        let b = sample_episode(&ds, &small_spec(), &mut Rng::new(9)).unwrap();
        assert_eq!(a.class_map, b.class_map);
        let ids = |e: &Episode| {
            e.support
                .iter()
                .chain(&e.query)
                .map(|i| i.source_index)
                .collect::<Vec<_>>()
        };
        assert_eq!(ids(&a), ids(&b));
    }

    #[test]
    fn images_are_resized() {
        let ds = dataset(&[20; 5]);
        let spec = EpisodeSpec {
            image_size: [7, 9],
            ..EpisodeSpec::default()
        };
        let ep = sample_episode(&ds, &spec, &mut Rng::new(2)).unwrap();
        ep.validate(&spec).unwrap();
        assert_eq!(ep.support[0].image.shape(), &[3, 7, 9]);
    }

    #[test]
    fn meta_batch_of_one_matches_derived_single_episode() {
        let ds = dataset(&[20; 8]);
        let batch = sample_meta_batch(&ds, &small_spec(), 1, &mut Rng::new(5)).unwrap();
        let base = Rng::new(5).fork();
        let single = sample_episode(&ds, &small_spec(), &mut base.derive_index("episode", 0)).unwrap();
        assert_eq!(batch[0].class_map, single.class_map);
        assert_eq!(
            batch[0].support.iter().map(|i| i.source_index).collect::<Vec<_>>(),
            single.support.iter().map(|i| i.source_index).collect::<Vec<_>>()
        );
    }

    #[test]
    fn batch_members_rarely_collide() {
        let ds = dataset(&[200; 10]);
        let mut collisions = 0;
        for seed in 0..100 {
            let b = sample_meta_batch(&ds, &small_spec(), 4, &mut Rng::new(seed)).unwrap();
            for i in 0..4 {
                for j in 0..i {
                    let si: Vec<_> = b[i].support.iter().map(|x| x.source_index).collect();
                    let sj: Vec<_> = b[j].support.iter().map(|x| x.source_index).collect();
                    collisions += usize::from(si == sj);
                }
            }
        }
        // identical supports need the same classes, order and images
        assert_eq!(collisions, 0);
    }

    #[test]
    fn local_slots_are_uniform() {
        let ds = dataset(&[16; 5]);
        let sampler = EpisodeSampler::new(&ds, &small_spec()).unwrap();
        let mut counts = [[0usize; 5]; 5];
        let mut rng = Rng::new(17);
        let n = 1000;
        for _ in 0..n {
            let ep = sampler.sample(&mut rng);
            for (local, &global) in ep.class_map.iter().enumerate() {
                counts[global][local] += 1;
            }
        }
        for row in counts {
            for c in row {
                let f = c as f64 / n as f64;
                assert!((f - 0.2).abs() <= 0.05, "slot frequency {f}");
            }
        }
    }
}
