use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::image_ops::{center_aligned, sample_bilinear};
use super::{DataError, Dataset, LabeledImage, Result, ValueRange};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FillMode {
    /// Out-of-bounds samples take the nearest edge pixel.
    Nearest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    pub rescale: f64,
    pub rotation_range_deg: f64,
    pub width_shift_frac: f64,
    pub height_shift_frac: f64,
    /// Shear angle bound in radians.
    pub shear_range: f64,
    /// Zoom factor is drawn from `[1 - zoom_range, 1 + zoom_range]`.
    pub zoom_range: f64,
    pub horizontal_flip: bool,
    pub fill_mode: FillMode,
    /// `[height, width]` of the output.
    pub target_size: [usize; 2],
    pub expansion_factor: usize,
    /// Also augment test and validation sets.
    pub augment_eval_sets: bool,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            rescale: 1.0 / 255.0,
            rotation_range_deg: 40.0,
            width_shift_frac: 0.2,
            height_shift_frac: 0.2,
            shear_range: 0.2,
            zoom_range: 0.2,
            horizontal_flip: true,
            fill_mode: FillMode::Nearest,
            target_size: [224, 224],
            expansion_factor: 10,
            augment_eval_sets: false,
        }
    }
}

impl AugmentationConfig {
    /// No geometric change: only resize and rescale remain.
    pub fn identity(target_size: [usize; 2]) -> Self {
        Self {
            rotation_range_deg: 0.0,
            width_shift_frac: 0.0,
            height_shift_frac: 0.0,
            shear_range: 0.0,
            zoom_range: 0.0,
            horizontal_flip: false,
            target_size,
            expansion_factor: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DataError::InvalidAugmentation(m));
        if !(self.rescale > 0.0 && self.rescale.is_finite()) {
            return bad(format!("rescale must be positive, got {}", self.rescale));
        }
        if !(0.0..=180.0).contains(&self.rotation_range_deg) {
            return bad(format!(
                "rotation_range_deg {} outside [0, 180]",
                self.rotation_range_deg
            ));
        }
        for (name, v) in [
            ("width_shift_frac", self.width_shift_frac),
            ("height_shift_frac", self.height_shift_frac),
            ("zoom_range", self.zoom_range),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} {v} outside [0, 1]"));
            }
        }
        if self.zoom_range >= 1.0 {
            return bad("zoom_range must be below 1".into());
        }
        if !(0.0..std::f64::consts::FRAC_PI_2).contains(&self.shear_range) {
            return bad(format!("shear_range {} outside [0, pi/2)", self.shear_range));
        }
        if self.target_size.contains(&0) {
            return bad("target_size must be positive".into());
        }
        if self.expansion_factor == 0 {
            return bad("expansion_factor must be at least 1".into());
        }
        Ok(())
    }

    /// `1 / rescale`, snapped to an integer when it is one up to rounding,
    /// so that `1/255` divides by exactly 255.
    fn divisor(&self) -> f64 {
        let d = 1.0 / self.rescale;
        if (d - d.round()).abs() <= 1e-9 * d {
            d.round()
        } else {
            d
        }
    }
}

/// Random parameters of one augmentation draw.
#[derive(Debug, Clone, Copy)]
struct Draw {
    theta: f64,
    tx: f64,
    ty: f64,
    shear: f64,
    zoom: f64,
    flip: bool,
}

impl Draw {
    fn sample(cfg: &AugmentationConfig, w: f64, h: f64, rng: &mut Rng) -> Self {
        let r = cfg.rotation_range_deg.to_radians();
        let theta = rng.uniform(-r, r);
        let tx = rng.uniform(-cfg.width_shift_frac, cfg.width_shift_frac) * w;
        let ty = rng.uniform(-cfg.height_shift_frac, cfg.height_shift_frac) * h;
        let shear = rng.uniform(-cfg.shear_range, cfg.shear_range);
        let zoom = rng.uniform(1.0 - cfg.zoom_range, 1.0 + cfg.zoom_range);
        let flip = rng.bernoulli(0.5) && cfg.horizontal_flip;
        Self {
            theta,
            tx,
            ty,
            shear,
            zoom,
            flip,
        }
    }

    /// Output-to-input map `[[a, b, c], [d, e, f]]` acting on `(x, y, 1)`
    /// in center-origin coordinates: rotation, then shift, shear and zoom.
    fn matrix(&self) -> [[f64; 3]; 2] {
        let (s, c) = self.theta.sin_cos();
        let rot = [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]];
        let shift = [[1.0, 0.0, self.tx], [0.0, 1.0, self.ty], [0.0, 0.0, 1.0]];
        let shear = [
            [1.0, -self.shear.sin(), 0.0],
            [0.0, self.shear.cos(), 0.0],
            [0.0, 0.0, 1.0],
        ];
        let zoom = [[self.zoom, 0.0, 0.0], [0.0, self.zoom, 0.0], [0.0, 0.0, 1.0]];
        let m = mul3(&mul3(&mul3(&rot, &shift), &shear), &zoom);
        [m[0], m[1]]
    }
}

fn mul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// One random augmentation of `img`, resampled to `cfg.target_size` and
/// rescaled into `[0, 1]`.
///
/// All six random values are drawn on every call, in a fixed order, even
/// when a range is zero or flipping is disabled. Images already in unit
/// range are not rescaled again.
pub fn augment(img: &LabeledImage, cfg: &AugmentationConfig, rng: &mut Rng) -> Result<LabeledImage> {
    cfg.validate()?;
    let (h_in, w_in) = (img.height(), img.width());
    let [h_out, w_out] = cfg.target_size;
    let draw = Draw::sample(cfg, w_in as f64, h_in as f64, rng);
    let [[a, b, c], [d, e, f]] = draw.matrix();
    let cx = (w_in as f64 - 1.0) / 2.0;
    let cy = (h_in as f64 - 1.0) / 2.0;
    let divisor = match img.range() {
        ValueRange::Raw => cfg.divisor(),
        ValueRange::Unit => 1.0,
    };

    let mut px = vec![0.0; h_out * w_out * 3];
    for oy in 0..h_out {
        let v = center_aligned(oy, h_out, h_in) - cy;
        for ox in 0..w_out {
            let mut u = center_aligned(ox, w_out, w_in) - cx;
            if draw.flip {
                u = -u;
            }
            let sx = a * u + b * v + c + cx;
            let sy = d * u + e * v + f + cy;
            let o = (oy * w_out + ox) * 3;
            sample_bilinear(img, sy, sx, &mut px[o..o + 3]);
            for p in &mut px[o..o + 3] {
                *p = (*p / divisor).clamp(0.0, 1.0);
            }
        }
    }
    Ok(img.with_pixels(h_out, w_out, px, ValueRange::Unit))
}

/// `expansion_factor` augmented variants of every image; the originals are
/// not included. Variant `k` of image `i` uses its own sub-stream, so the
/// result does not depend on thread scheduling.
pub fn augment_expand(ds: &Dataset, cfg: &AugmentationConfig, rng: &mut Rng) -> Result<Dataset> {
    cfg.validate()?;
    let base = rng.fork();
    let factor = cfg.expansion_factor;
    let images = (0..ds.len() * factor)
        .into_par_iter()
        .map(|j| {
            let (i, k) = (j / factor, j % factor);
            let mut sub = base.derive_index("augment", j as u64);
            let mut out = augment(&ds.images[i], cfg, &mut sub)?;
            out.source = Some(match &ds.images[i].source {
                Some(s) => format!("{s}#aug{k}"),
                None => format!("{i}#aug{k}"),
            });
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(ds.class_names().to_vec(), images)
}
