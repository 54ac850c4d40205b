//! Image datasets: loading, augmentation, stratified splits and the
//! procedural flower generator used for offline experiments.

mod augment;
mod image_ops;
mod io;
mod split;
pub mod synth;

pub use augment::{augment, augment_expand, AugmentationConfig, FillMode};
pub use image_ops::{channel_histogram, flip_horizontal, hsv_to_rgb, mean_rgb, resize, rgb_to_hue};
pub use io::{load_image, load_image_dir, read_manifest, save_image_tree, write_manifest, ManifestRecord, SplitTag};
pub use split::{split, SplitSpec, Splits};
pub use synth::{synth_generate, FloraClass, SyntheticFloraSpec};

use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("dataset root {0} does not exist")]
    MissingRoot(String),
    #[error("class directory {0} contains no images")]
    EmptyClass(String),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("invalid augmentation config: {0}")]
    InvalidAugmentation(String),
    #[error("generators overlap: {0}")]
    GeneratorOverlap(String),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Declared value range of an image's pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueRange {
    /// `[0, 255]`, as decoded.
    Raw,
    /// `[0, 1]`, after rescaling.
    Unit,
}

impl ValueRange {
    pub fn max(self) -> f64 {
        match self {
            ValueRange::Raw => 255.0,
            ValueRange::Unit => 1.0,
        }
    }
}

/// An RGB image stored row-major as `H x W x 3` doubles.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    height: usize,
    width: usize,
    pixels: Vec<f64>,
    range: ValueRange,
    pub label: usize,
    pub class_name: String,
    /// Path relative to the dataset root, or a generated identifier.
    pub source: Option<String>,
}

impl LabeledImage {
    pub fn new(
        height: usize,
        width: usize,
        pixels: Vec<f64>,
        range: ValueRange,
        label: usize,
        class_name: impl Into<String>,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(DataError::InvalidImage("empty image".into()));
        }
        if pixels.len() != height * width * 3 {
            return Err(DataError::InvalidImage(format!(
                "{}x{}x3 image needs {} values, got {}",
                height,
                width,
                height * width * 3,
                pixels.len()
            )));
        }
        let max = range.max();
        if let Some(bad) = pixels.iter().find(|v| !(0.0..=max).contains(*v)) {
            return Err(DataError::InvalidImage(format!("pixel value {bad} outside [0, {max}]")));
        }
        Ok(Self {
            height,
            width,
            pixels,
            range,
            label,
            class_name: class_name.into(),
            source: None,
        })
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = Some(source.into());
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn range(&self) -> ValueRange {
        self.range
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixel(&self, y: usize, x: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * 3 + c]
    }

    /// Same label and metadata, new pixel buffer.
    pub(crate) fn with_pixels(&self, height: usize, width: usize, pixels: Vec<f64>, range: ValueRange) -> Self {
        debug_assert_eq!(pixels.len(), height * width * 3);
        Self {
            height,
            width,
            pixels,
            range,
            label: self.label,
            class_name: self.class_name.clone(),
            source: self.source.clone(),
        }
    }

    /// Pixels divided by 255 when raw; unchanged when already in `[0, 1]`.
    pub fn to_unit(&self) -> LabeledImage {
        match self.range {
            ValueRange::Unit => self.clone(),
            ValueRange::Raw => {
                let px = self.pixels.iter().map(|v| v / 255.0).collect();
                self.with_pixels(self.height, self.width, px, ValueRange::Unit)
            }
        }
    }

    /// Channel-first `[3, H, W]` tensor in `[0, 1]`, resized to `(h, w)`.
    pub fn to_chw(&self, h: usize, w: usize) -> Tensor {
        let img = if (h, w) == (self.height, self.width) {
            self.to_unit()
        } else {
            resize(&self.to_unit(), h, w)
        };
        let plane = h * w;
        let mut out = vec![0.0; 3 * plane];
        for (i, px) in img.pixels.chunks(3).enumerate() {
            for c in 0..3 {
                out[c * plane + i] = px[c];
            }
        }
        Tensor::new(&[3, h, w], out).expect("3 x h x w buffer")
    }
}

/// Labeled images plus the ordered class-name table.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Vec<LabeledImage>,
    class_names: Vec<String>,
}

impl Dataset {
    pub fn new(class_names: Vec<String>, images: Vec<LabeledImage>) -> Result<Self> {
        for (i, a) in class_names.iter().enumerate() {
            if class_names[..i].contains(a) {
                return Err(DataError::InvalidDataset(format!("duplicate class name {a:?}")));
            }
        }
        if let Some(img) = images.iter().find(|img| img.label >= class_names.len()) {
            return Err(DataError::InvalidDataset(format!(
                "label {} out of range for {} classes",
                img.label,
                class_names.len()
            )));
        }
        Ok(Self { images, class_names })
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.images.iter().map(|i| i.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for img in &self.images {
            counts[img.label] += 1;
        }
        counts
    }

    /// Image indices grouped by label.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes()];
        for (i, img) in self.images.iter().enumerate() {
            out[img.label].push(i);
        }
        out
    }

    /// Batch `[N, 3, h, w]` of the selected images in `[0, 1]`.
    pub fn batch(&self, indices: &[usize], h: usize, w: usize) -> Tensor {
        let per = 3 * h * w;
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(self.images[i].to_chw(h, w).data());
        }
        Tensor::new(&[indices.len(), 3, h, w], data).expect("batch buffer")
    }
}
