//! Procedural flower images.
//!
//! Each class is a radial petal arrangement with a class-specific petal
//! count range, petal shape, hue band and center disk, drawn over a
//! textured foliage background. Pixels are integer levels in `[0, 255]`,
//! so a generated dataset survives a PNG round trip unchanged.

use serde::{Deserialize, Serialize};

use super::image_ops::hsv_to_rgb;
use super::{DataError, Dataset, LabeledImage, Result, ValueRange};
use crate::rng::Rng;

/// Generative parameters of one synthetic class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FloraClass {
    pub name: String,
    /// Inclusive petal-count range.
    pub petal_count: [u32; 2],
    /// Petal sharpness; larger values give narrower petals.
    pub eccentricity: f64,
    /// Petal hue in degrees.
    pub hue_center: f64,
    pub hue_jitter: f64,
    pub saturation: [f64; 2],
    pub value: [f64; 2],
    /// Center disk color as `[hue, saturation, value]`.
    pub center_hsv: [f64; 3],
    /// Center disk radius relative to the flower radius.
    pub center_frac: f64,
    pub background_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticFloraSpec {
    pub image_size: usize,
    pub classes: Vec<FloraClass>,
}

#[allow(clippy::too_many_arguments)]
fn class(
    name: &str,
    petal_count: [u32; 2],
    eccentricity: f64,
    hue: (f64, f64),
    saturation: [f64; 2],
    value: [f64; 2],
    center_hsv: [f64; 3],
    center_frac: f64,
    background_seed: u64,
) -> FloraClass {
    FloraClass {
        name: name.into(),
        petal_count,
        eccentricity,
        hue_center: hue.0,
        hue_jitter: hue.1,
        saturation,
        value,
        center_hsv,
        center_frac,
        background_seed,
    }
}

impl SyntheticFloraSpec {
    /// Five classes modeled on daisy, dandelion, rose, sunflower and tulip.
    /// Rose and tulip share part of a hue band; dandelion and sunflower are
    /// both yellow. They stay separable by petal count and center.
    pub fn flowers(image_size: usize) -> Self {
        Self {
            image_size,
            classes: vec![
                class(
                    "daisy",
                    [11, 15],
                    2.0,
                    (50.0, 5.0),
                    [0.02, 0.12],
                    [0.92, 1.0],
                    [48.0, 0.9, 0.9],
                    0.25,
                    11,
                ),
                class(
                    "dandelion",
                    [24, 32],
                    3.0,
                    (52.0, 5.0),
                    [0.85, 1.0],
                    [0.9, 1.0],
                    [45.0, 0.95, 0.8],
                    0.15,
                    12,
                ),
                class(
                    "rose",
                    [5, 7],
                    0.6,
                    (350.0, 8.0),
                    [0.75, 0.9],
                    [0.55, 0.75],
                    [350.0, 0.9, 0.4],
                    0.2,
                    13,
                ),
                class(
                    "sunflower",
                    [16, 22],
                    1.5,
                    (42.0, 5.0),
                    [0.9, 1.0],
                    [0.85, 0.95],
                    [25.0, 0.7, 0.3],
                    0.45,
                    14,
                ),
                class(
                    "tulip",
                    [3, 4],
                    0.5,
                    (335.0, 10.0),
                    [0.6, 0.8],
                    [0.85, 0.95],
                    [70.0, 0.6, 0.7],
                    0.1,
                    15,
                ),
            ],
        }
    }

    /// Five pretext classes whose hue bands are disjoint from every class
    /// of [`flowers`](Self::flowers).
    pub fn pretext(image_size: usize) -> Self {
        Self {
            image_size,
            classes: vec![
                class(
                    "marigold",
                    [10, 14],
                    1.5,
                    (25.0, 4.0),
                    [0.85, 1.0],
                    [0.85, 1.0],
                    [20.0, 0.8, 0.4],
                    0.3,
                    21,
                ),
                class(
                    "bluebell",
                    [3, 4],
                    0.7,
                    (200.0, 6.0),
                    [0.5, 0.7],
                    [0.7, 0.9],
                    [200.0, 0.3, 0.9],
                    0.1,
                    22,
                ),
                class(
                    "cornflower",
                    [8, 12],
                    2.5,
                    (225.0, 8.0),
                    [0.7, 0.9],
                    [0.7, 0.9],
                    [250.0, 0.8, 0.3],
                    0.2,
                    23,
                ),
                class(
                    "violet",
                    [5, 5],
                    0.8,
                    (275.0, 8.0),
                    [0.6, 0.8],
                    [0.5, 0.7],
                    [55.0, 0.9, 0.9],
                    0.12,
                    24,
                ),
                class(
                    "lilac",
                    [14, 20],
                    1.0,
                    (300.0, 8.0),
                    [0.3, 0.5],
                    [0.8, 0.95],
                    [300.0, 0.2, 0.95],
                    0.15,
                    25,
                ),
            ],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }

    /// Checks ranges, and that every pair of classes is separated in hue,
    /// petal count or saturation.
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 8 {
            return Err(DataError::InvalidDataset(format!(
                "image_size {} is below 8",
                self.image_size
            )));
        }
        if self.classes.len() < 2 {
            return Err(DataError::InvalidDataset("need at least two classes".into()));
        }
        for c in &self.classes {
            let ok = c.petal_count[0] >= 1
                && c.petal_count[0] <= c.petal_count[1]
                && c.eccentricity > 0.0
                && c.hue_jitter >= 0.0
                && unit_range(c.saturation)
                && unit_range(c.value)
                && c.center_hsv[1..].iter().all(|v| (0.0..=1.0).contains(v))
                && (0.0..1.0).contains(&c.center_frac);
            if !ok {
                return Err(DataError::InvalidDataset(format!(
                    "class {:?} has invalid parameters",
                    c.name
                )));
            }
        }
        for (i, a) in self.classes.iter().enumerate() {
            for b in &self.classes[..i] {
                if a.name == b.name {
                    return Err(DataError::InvalidDataset(format!("duplicate class name {:?}", a.name)));
                }
                let separated = !hue_overlap(a, b)
                    || !interval_overlap(a.petal_count.map(f64::from), b.petal_count.map(f64::from))
                    || !interval_overlap(a.saturation, b.saturation);
                if !separated {
                    return Err(DataError::InvalidDataset(format!(
                        "classes {:?} and {:?} overlap in hue, petal count and saturation",
                        b.name, a.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Error unless every class of `self` differs from every class of
    /// `other` by name and by hue band or petal-count range.
    pub fn check_disjoint(&self, other: &SyntheticFloraSpec) -> Result<()> {
        for a in &self.classes {
            for b in &other.classes {
                if a.name == b.name {
                    return Err(DataError::GeneratorOverlap(format!(
                        "class name {:?} appears in both",
                        a.name
                    )));
                }
                if hue_overlap(a, b) && interval_overlap(a.petal_count.map(f64::from), b.petal_count.map(f64::from)) {
                    return Err(DataError::GeneratorOverlap(format!(
                        "{:?} and {:?} share hue and petal-count ranges",
                        a.name, b.name
                    )));
                }
            }
        }
        Ok(())
    }
}

fn unit_range(r: [f64; 2]) -> bool {
    0.0 <= r[0] && r[0] <= r[1] && r[1] <= 1.0
}

fn interval_overlap(a: [f64; 2], b: [f64; 2]) -> bool {
    a[0] <= b[1] && b[0] <= a[1]
}

fn hue_overlap(a: &FloraClass, b: &FloraClass) -> bool {
    let d = (a.hue_center - b.hue_center).rem_euclid(360.0);
    let d = d.min(360.0 - d);
    d <= a.hue_jitter + b.hue_jitter
}

/// `per_class` images of every class, in class order.
pub fn synth_generate(spec: &SyntheticFloraSpec, per_class: usize, rng: &mut Rng) -> Result<Dataset> {
    spec.validate()?;
    if per_class == 0 {
        return Err(DataError::InvalidDataset("per_class must be at least 1".into()));
    }
    let base = rng.fork();
    let mut images = Vec::with_capacity(per_class * spec.n_classes());
    for (label, cls) in spec.classes.iter().enumerate() {
        for i in 0..per_class {
            let mut sub = base.derive_index(&cls.name, i as u64);
            let px = render(cls, spec.image_size, &mut sub);
            let img = LabeledImage::new(
                spec.image_size,
                spec.image_size,
                px,
                ValueRange::Raw,
                label,
                cls.name.clone(),
            )?;
            images.push(img.with_source(format!("{}/{i:05}", cls.name)));
        }
    }
    Dataset::new(spec.class_names(), images)
}

fn render(cls: &FloraClass, size: usize, rng: &mut Rng) -> Vec<f64> {
    use std::f64::consts::PI;
    let s = size as f64;

    // per-class texture directions, per-image phases
    let mut tex = Rng::new(cls.background_seed);
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            let angle = tex.uniform(0.0, PI);
            let freq = tex.uniform(2.0, 6.0) * 2.0 * PI / s;
            (angle.cos() * freq, angle.sin() * freq, rng.uniform(0.0, 2.0 * PI))
        })
        .collect();
    let bg_hue = rng.uniform(80.0, 150.0);
    let bg_sat = rng.uniform(0.3, 0.5);
    let bg_val = rng.uniform(0.2, 0.35);

    let petals = cls.petal_count[0] + rng.below((cls.petal_count[1] - cls.petal_count[0] + 1) as usize) as u32;
    let hue = cls.hue_center + rng.uniform(-cls.hue_jitter, cls.hue_jitter);
    let sat = rng.uniform(cls.saturation[0], cls.saturation[1]);
    let val = rng.uniform(cls.value[0], cls.value[1]);
    let radius = s * rng.uniform(0.32, 0.44);
    let cx = s / 2.0 + s * rng.uniform(-0.1, 0.1);
    let cy = s / 2.0 + s * rng.uniform(-0.1, 0.1);
    let phase = rng.uniform(0.0, 2.0 * PI);
    let depth = 0.6;

    let mut px = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
            let r = dx.hypot(dy);
            let theta = dy.atan2(dx);
            let lobe = (petals as f64 * (theta - phase) / 2.0)
                .cos()
                .abs()
                .powf(cls.eccentricity);
            let rho = radius * (1.0 - depth + depth * lobe);
            let rgb = if r < radius * cls.center_frac {
                let [h, cs, cv] = cls.center_hsv;
                hsv_to_rgb(h, cs, cv * (0.85 + 0.15 * r / (radius * cls.center_frac)))
            } else if r < rho {
                hsv_to_rgb(hue, sat, val * (0.7 + 0.3 * (r / rho)))
            } else {
                let t: f64 = waves
                    .iter()
                    .map(|(kx, ky, p)| (kx * x as f64 + ky * y as f64 + p).sin())
                    .sum::<f64>()
                    / 3.0;
                hsv_to_rgb(bg_hue, bg_sat, (bg_val + 0.1 * t).clamp(0.0, 1.0))
            };
            for c in rgb {
                px.push((c * 255.0 + 3.0 * rng.normal()).round().clamp(0.0, 255.0));
            }
        }
    }
    px
}
