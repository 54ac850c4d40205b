use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::{DataError, Dataset, LabeledImage, Result, ValueRange};

fn io_err(path: &Path, e: impl fmt::Display) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn is_image_file(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

/// Decode one PNG/JPEG file to a raw-range RGB image.
pub fn load_image(path: &Path, label: usize, class_name: &str) -> Result<LabeledImage> {
    let decoded = image::open(path).map_err(|e| io_err(path, e))?.to_rgb8();
    let (w, h) = decoded.dimensions();
    let px = decoded.into_raw().into_iter().map(f64::from).collect();
    LabeledImage::new(h as usize, w as usize, px, ValueRange::Raw, label, class_name).map_err(|e| io_err(path, e))
}

/// Load a class-per-subdirectory tree. Classes are indexed by sorted
/// directory name and files are read in sorted order; images keep their
/// original size.
pub fn load_image_dir(root: impl AsRef<Path>) -> Result<Dataset> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(DataError::MissingRoot(root.display().to_string()));
    }
    let mut class_dirs: Vec<_> = fs::read_dir(root)
        .map_err(|e| io_err(root, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    class_dirs.sort();
    if class_dirs.is_empty() {
        return Err(DataError::InvalidDataset(format!(
            "{} has no class subdirectories",
            root.display()
        )));
    }

    let mut names = Vec::new();
    let mut images = Vec::new();
    for (label, dir) in class_dirs.iter().enumerate() {
        let name = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| io_err(dir, "non UTF-8 directory name"))?;
        let mut files: Vec<_> = fs::read_dir(dir)
            .map_err(|e| io_err(dir, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && is_image_file(p))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(DataError::EmptyClass(dir.display().to_string()));
        }
        for file in files {
            let rel = file
                .strip_prefix(root)
                .unwrap_or(&file)
                .to_string_lossy()
                .replace('\\', "/");
            images.push(load_image(&file, label, name)?.with_source(rel));
        }
        names.push(name.to_string());
    }
    Dataset::new(names, images)
}

/// Write every image as an 8-bit PNG under `root/<class_name>/` and return
/// the relative paths in dataset order.
///
/// Unit-range images are scaled by 255; values are rounded to the nearest
/// level, so integer-valued raw images round-trip exactly.
pub fn save_image_tree(ds: &Dataset, root: impl AsRef<Path>) -> Result<Vec<String>> {
    let root = root.as_ref();
    for name in ds.class_names() {
        let dir = root.join(name);
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    }
    let mut per_class = vec![0usize; ds.num_classes()];
    let mut paths = Vec::with_capacity(ds.len());
    for img in &ds.images {
        let rel = format!("{}/{:05}.png", ds.class_names()[img.label], per_class[img.label]);
        per_class[img.label] += 1;
        let scale = 255.0 / img.range().max();
        let bytes = img
            .pixels()
            .iter()
            .map(|v| (v * scale).round().clamp(0.0, 255.0) as u8)
            .collect();
        let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, bytes).expect("HWC buffer");
        let path = root.join(&rel);
        buf.save(&path).map_err(|e| io_err(&path, e))?;
        paths.push(rel);
    }
    Ok(paths)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitTag {
    Train,
    Test,
    Val,
    Unused,
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitTag::Train => "train",
            SplitTag::Test => "test",
            SplitTag::Val => "val",
            SplitTag::Unused => "unused",
        })
    }
}

impl FromStr for SplitTag {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(SplitTag::Train),
            "test" => Ok(SplitTag::Test),
            "val" => Ok(SplitTag::Val),
            "unused" => Ok(SplitTag::Unused),
            other => Err(format!("unknown split tag {other:?}")),
        }
    }
}

/// One manifest line: relative path, class index and split tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub path: String,
    pub class_index: usize,
    pub split: SplitTag,
}

const MANIFEST_HEADER: &str = "# path\tclass_index\tsplit";

pub fn write_manifest(path: impl AsRef<Path>, records: &[ManifestRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for r in records {
        if r.path.contains(['\t', '\n']) {
            return Err(io_err(
                path,
                format!("record path {:?} contains a tab or newline", r.path),
            ));
        }
        out.push_str(&format!("{}\t{}\t{}\n", r.path, r.class_index, r.split));
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |message: String| DataError::Manifest { line: i + 1, message };
        let fields: Vec<&str> = line.split('\t').collect();
        let [p, c, s] = fields[..] else {
            return Err(bad(format!("expected 3 tab-separated fields, got {}", fields.len())));
        };
        out.push(ManifestRecord {
            path: p.to_string(),
            class_index: c.parse().map_err(|_| bad(format!("bad class index {c:?}")))?,
            split: s.parse().map_err(bad)?,
        });
    }
    Ok(out)
}
