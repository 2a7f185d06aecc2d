//! Labeled image manifests, preprocessing, fold plans and the synthetic
//! desk-scale corpus.

pub mod folds;
pub mod preprocess;
pub mod synth;

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use folds::{make_fold_plan, Fold, FoldPlan};
pub use preprocess::{load_image, load_samples, preprocess, preprocess_file};
pub use synth::{generate_synthetic_corpus, SynthOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassLabel {
    Healthy,
    Pneumonia,
    Covid,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 3] = [ClassLabel::Healthy, ClassLabel::Pneumonia, ClassLabel::Covid];

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Healthy => "healthy",
            ClassLabel::Pneumonia => "pneumonia",
            ClassLabel::Covid => "covid",
        }
    }

    pub fn is_anomaly(self) -> bool {
        self == ClassLabel::Covid
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "healthy" => Ok(ClassLabel::Healthy),
            "pneumonia" => Ok(ClassLabel::Pneumonia),
            "covid" => Ok(ClassLabel::Covid),
            _ => Err(s.to_string()),
        }
    }
}

/// Which classes count as "normal" during training. The anomaly pool is
/// always COVID.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    #[serde(alias = "i")]
    Healthy,
    #[serde(alias = "ii")]
    HealthyPlusPneumonia,
    #[serde(alias = "iii")]
    Pneumonia,
}

impl Setting {
    pub fn normal_labels(self) -> &'static [ClassLabel] {
        match self {
            Setting::Healthy => &[ClassLabel::Healthy],
            Setting::HealthyPlusPneumonia => &[ClassLabel::Healthy, ClassLabel::Pneumonia],
            Setting::Pneumonia => &[ClassLabel::Pneumonia],
        }
    }

    pub fn is_normal(self, label: ClassLabel) -> bool {
        self.normal_labels().contains(&label)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Setting::Healthy => "healthy",
            Setting::HealthyPlusPneumonia => "healthy_plus_pneumonia",
            Setting::Pneumonia => "pneumonia",
        }
    }

    /// Row caption used in result tables.
    pub fn caption(self) -> &'static str {
        match self {
            Setting::Healthy => "(i) Healthy",
            Setting::HealthyPlusPneumonia => "(ii) Healthy + Pneumonia",
            Setting::Pneumonia => "(iii) Pneumonia",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Setting {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "healthy" | "i" => Ok(Setting::Healthy),
            "healthy_plus_pneumonia" | "ii" => Ok(Setting::HealthyPlusPneumonia),
            "pneumonia" | "iii" => Ok(Setting::Pneumonia),
            _ => Err(format!("unknown setting {s:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub sample_id: String,
    /// Image path; relative paths are resolved against the manifest's
    /// directory.
    pub path: PathBuf,
    pub label: ClassLabel,
}

/// A validated list of labeled images: non-empty, unique sample ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    entries: Vec<ManifestEntry>,
    base_dir: PathBuf,
}

#[derive(Deserialize)]
struct ManifestRow {
    sample_id: String,
    path: String,
    label: String,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let base_dir = base_dir.into();
        if entries.is_empty() {
            return Err(Error::EmptyManifest(base_dir));
        }
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if !seen.insert(e.sample_id.as_str()) {
                return Err(Error::DuplicateSampleId(e.sample_id.clone()));
            }
        }
        Ok(Manifest { entries, base_dir })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.base_dir.join(&entry.path)
        }
    }

    pub fn count(&self, label: ClassLabel) -> usize {
        self.entries.iter().filter(|e| e.label == label).count()
    }

    pub fn get(&self, sample_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.sample_id == sample_id)
    }

    /// Writes the manifest as `sample_id,path,label` CSV.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let csv_err = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["sample_id", "path", "label"]).map_err(csv_err)?;
        for e in &self.entries {
            let p = e.path.to_string_lossy();
            w.write_record([e.sample_id.as_str(), p.as_ref(), e.label.as_str()])
                .map_err(csv_err)?;
        }
        w.flush()
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

/// Reads a `sample_id,path,label` CSV manifest. Labels are matched
/// case-insensitively against `healthy`, `pneumonia` and `covid`.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    if !path.is_file() {
        return Err(Error::Data(format!("manifest {} does not exist", path.display())));
    }
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let headers = reader.headers().map_err(csv_err)?.clone();
    for required in ["sample_id", "path", "label"] {
        if !headers.iter().any(|h| h == required) {
            return Err(Error::Data(format!(
                "manifest {} lacks a {required:?} column",
                path.display()
            )));
        }
    }
    let mut entries = Vec::new();
    for (i, row) in reader.deserialize::<ManifestRow>().enumerate() {
        let row = row.map_err(csv_err)?;
        let label = row
            .label
            .parse()
            .map_err(|label| Error::UnknownLabel { label, line: i + 2 })?;
        entries.push(ManifestEntry {
            sample_id: row.sample_id,
            path: PathBuf::from(row.path),
            label,
        });
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    if entries.is_empty() {
        return Err(Error::EmptyManifest(path.to_path_buf()));
    }
    Manifest::new(entries, base)
}

/// One preprocessed grayscale image. Pixels are stored as `f32` in [0, 1];
/// networks widen them to `f64` when batches are assembled.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample {
    pub sample_id: String,
    pub pixels: Array2<f32>,
    pub label: ClassLabel,
}

impl ImageSample {
    pub fn side(&self) -> usize {
        self.pixels.nrows()
    }
}
