//! Confusion matrices and per-class precision / recall / F1 reports.
//!
//! Confusion matrices are indexed `counts[true][predicted]`.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("{preds} predictions but {labels} labels")]
    LengthMismatch { preds: usize, labels: usize },
    #[error("class index {index} out of range for {classes} classes")]
    OutOfRange { index: usize, classes: usize },
    #[error("{names} class names for {classes} classes")]
    Names { names: usize, classes: usize },
    #[error("{0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, MetricsError>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
    class_names: Vec<String>,
}

impl ConfusionMatrix {
    pub fn n_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth][pred]
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n_classes() {
            return Err(MetricsError::Names {
                names: names.len(),
                classes: self.n_classes(),
            });
        }
        self.class_names = names;
        Ok(self)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    /// trace / total; 0 for an empty matrix.
    pub fn accuracy(&self) -> f64 {
        ratio(self.trace(), self.total()).0
    }
}

/// Tally `(label, pred)` pairs. Class names default to `class_{i}`.
pub fn confusion(preds: &[usize], labels: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            preds: preds.len(),
            labels: labels.len(),
        });
    }
    let mut counts = vec![vec![0u64; n_classes]; n_classes];
    for (&p, &t) in preds.iter().zip(labels) {
        if let Some(&index) = [t, p].iter().find(|&&i| i >= n_classes) {
            return Err(MetricsError::OutOfRange {
                index,
                classes: n_classes,
            });
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix {
        counts,
        class_names: (0..n_classes).map(|i| format!("class_{i}")).collect(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassReport {
    pub class_name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
    /// Precision had a zero denominator and was set to 0.
    pub precision_undefined: bool,
    /// Recall had a zero denominator and was set to 0.
    pub recall_undefined: bool,
}

impl ClassReport {
    pub fn undefined_flags(&self) -> String {
        match (self.precision_undefined, self.recall_undefined) {
            (false, false) => String::new(),
            (true, false) => "precision".into(),
            (false, true) => "recall".into(),
            (true, true) => "precision recall".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub classes: Vec<ClassReport>,
    pub macro_avg: Averages,
    pub weighted_avg: Averages,
    pub accuracy: f64,
    pub total: u64,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn class_report(cm: &ConfusionMatrix) -> Report {
    let classes: Vec<ClassReport> = (0..cm.n_classes())
        .map(|i| {
            let tp = cm.count(i, i);
            let (precision, precision_undefined) = ratio(tp, cm.col_sum(i));
            let (recall, recall_undefined) = ratio(tp, cm.row_sum(i));
            ClassReport {
                class_name: cm.class_names[i].clone(),
                precision,
                recall,
                f1: f1_score(precision, recall),
                support: cm.row_sum(i),
                precision_undefined,
                recall_undefined,
            }
        })
        .collect();
    let n = classes.len().max(1) as f64;
    let total = cm.total();
    let macro_avg = Averages {
        precision: classes.iter().map(|c| c.precision).sum::<f64>() / n,
        recall: classes.iter().map(|c| c.recall).sum::<f64>() / n,
        f1: classes.iter().map(|c| c.f1).sum::<f64>() / n,
    };
    let weighted = |f: fn(&ClassReport) -> f64| {
        if total == 0 {
            0.0
        } else {
            classes.iter().map(|c| f(c) * c.support as f64).sum::<f64>() / total as f64
        }
    };
    let weighted_avg = Averages {
        precision: weighted(|c| c.precision),
        recall: weighted(|c| c.recall),
        f1: weighted(|c| c.f1),
    };
    Report {
        accuracy: cm.accuracy(),
        classes,
        macro_avg,
        weighted_avg,
        total,
    }
}

impl Report {
    /// Aligned plain-text table with macro and weighted rows.
    pub fn to_text(&self) -> String {
        let width = self
            .classes
            .iter()
            .map(|c| c.class_name.len())
            .chain(["weighted avg".len()])
            .max()
            .unwrap_or(0);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<width$}  {:>9}  {:>9}  {:>9}  {:>7}",
            "class", "precision", "recall", "f1", "support"
        );
        for c in &self.classes {
            let mark = if c.precision_undefined || c.recall_undefined {
                " *"
            } else {
                ""
            };
            let _ = writeln!(
                s,
                "{:<width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>7}{mark}",
                c.class_name, c.precision, c.recall, c.f1, c.support
            );
        }
        for (name, a) in [("macro avg", self.macro_avg), ("weighted avg", self.weighted_avg)] {
            let _ = writeln!(
                s,
                "{:<width$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>7}",
                name, a.precision, a.recall, a.f1, self.total
            );
        }
        let _ = writeln!(s, "\naccuracy {:.4} ({} samples)", self.accuracy, self.total);
        if self.classes.iter().any(|c| c.precision_undefined || c.recall_undefined) {
            let _ = writeln!(s, "* zero denominator, score reported as 0");
        }
        s
    }

    /// CSV with one row per class followed by `macro avg` and `weighted avg`.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let io = |e: csv::Error| MetricsError::Io(e.to_string());
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["class_name", "precision", "recall", "f1", "support", "undefined_flags"])
            .map_err(io)?;
        for c in &self.classes {
            out.write_record([
                c.class_name.clone(),
                c.precision.to_string(),
                c.recall.to_string(),
                c.f1.to_string(),
                c.support.to_string(),
                c.undefined_flags(),
            ])
            .map_err(io)?;
        }
        for (name, a) in [("macro avg", self.macro_avg), ("weighted avg", self.weighted_avg)] {
            out.write_record([
                name.to_string(),
                a.precision.to_string(),
                a.recall.to_string(),
                a.f1.to_string(),
                self.total.to_string(),
                String::new(),
            ])
            .map_err(io)?;
        }
        out.flush().map_err(|e| MetricsError::Io(e.to_string()))
    }
}

/// Grayscale heatmap, `cell` pixels per matrix entry; darker means more.
pub fn heatmap(cm: &ConfusionMatrix, cell: u32) -> image::GrayImage {
    let n = cm.n_classes() as u32;
    let max = cm.counts.iter().flatten().copied().max().unwrap_or(0).max(1);
    image::GrayImage::from_fn(n * cell, n * cell, |x, y| {
        let c = cm.counts[(y / cell) as usize][(x / cell) as usize];
        image::Luma([255 - ((c as f64 / max as f64) * 255.0).round() as u8])
    })
}

/// Paths written by [`render_report`].
#[derive(Debug, Clone)]
pub struct ReportFiles {
    pub text: std::path::PathBuf,
    pub csv: std::path::PathBuf,
    pub heatmap: std::path::PathBuf,
}

/// Write `{stem}.txt`, `{stem}.csv` and `{stem}_confusion.png` into `dir`.
pub fn render_report(report: &Report, cm: &ConfusionMatrix, dir: &Path, stem: &str) -> Result<ReportFiles> {
    let io = |p: &Path, e: &dyn std::fmt::Display| MetricsError::Io(format!("{}: {e}", p.display()));
    std::fs::create_dir_all(dir).map_err(|e| io(dir, &e))?;
    let files = ReportFiles {
        text: dir.join(format!("{stem}.txt")),
        csv: dir.join(format!("{stem}.csv")),
        heatmap: dir.join(format!("{stem}_confusion.png")),
    };
    let mut text = report.to_text();
    text.push_str("\nconfusion matrix (rows = true class, columns = predicted)\n");
    for (name, row) in cm.class_names.iter().zip(&cm.counts) {
        let cells: Vec<String> = row.iter().map(|c| format!("{c:>5}")).collect();
        let _ = writeln!(text, "{name:<12} {}", cells.join(""));
    }
    std::fs::write(&files.text, text).map_err(|e| io(&files.text, &e))?;
    let f = std::fs::File::create(&files.csv).map_err(|e| io(&files.csv, &e))?;
    report.write_csv(f)?;
    heatmap(cm, 32)
        .save(&files.heatmap)
        .map_err(|e| io(&files.heatmap, &e))?;
    Ok(files)
}
