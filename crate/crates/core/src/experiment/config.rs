use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Setting;
use crate::error::{Error, Result};
use crate::nets::ModelConfig;
use crate::scoring::SigmaKind;
use crate::training::{Regime, TrainConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// One experiment: a setting, a regime and a k-fold protocol over a manifest.
///
/// `train.seed` is not read; each fold trains with a seed derived from the
/// top-level `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub manifest: PathBuf,
    pub setting: Setting,
    pub regime: Regime,
    pub k: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub sigma: SigmaKind,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

fn default_workers() -> usize {
    1
}

/// The fields that determine results. Paths to outputs and the worker count
/// are left out.
#[derive(Serialize)]
struct Scientific<'a> {
    schema_version: u32,
    manifest: &'a Path,
    setting: Setting,
    regime: Regime,
    k: usize,
    seed: u64,
    sigma: SigmaKind,
    model: &'a ModelConfig,
    train: TrainConfig,
}

impl ExperimentConfig {
    /// Desk-scale preset for `regime` in `setting`.
    pub fn desk(
        manifest: impl Into<PathBuf>,
        output_dir: impl Into<PathBuf>,
        setting: Setting,
        regime: Regime,
    ) -> Self {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            manifest: manifest.into(),
            setting,
            regime,
            k: 3,
            seed: 0,
            output_dir: output_dir.into(),
            workers: default_workers(),
            sigma: SigmaKind::Population,
            model: ModelConfig::desk(),
            train: TrainConfig::desk(regime),
        }
    }

    /// Full-scale preset for `regime` in `setting`.
    pub fn full(
        manifest: impl Into<PathBuf>,
        output_dir: impl Into<PathBuf>,
        setting: Setting,
        regime: Regime,
    ) -> Self {
        ExperimentConfig {
            model: ModelConfig::default(),
            train: TrainConfig::full(regime),
            ..Self::desk(manifest, output_dir, setting, regime)
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Config(format!("config file {} not found", path.display())),
            _ => Error::io(format!("reading {}", path.display()), e),
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.train.regime != self.regime {
            return Err(Error::Config(format!(
                "[train] regime {} disagrees with regime {}",
                self.train.regime, self.regime
            )));
        }
        if self.k < 2 {
            return Err(Error::Config(format!("k must be at least 2, got {}", self.k)));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        self.model.validate()?;
        self.train.validate()
    }

    /// Hex SHA-256 of the result-determining fields.
    pub fn hash(&self) -> String {
        let sci = Scientific {
            schema_version: self.schema_version,
            manifest: &self.manifest,
            setting: self.setting,
            regime: self.regime,
            k: self.k,
            seed: self.seed,
            sigma: self.sigma,
            model: &self.model,
            train: TrainConfig {
                seed: 0,
                ..self.train.clone()
            },
        };
        let json = serde_json::to_vec(&sci).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Names of the sections in which two configs differ scientifically.
    pub fn differences(&self, other: &ExperimentConfig) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.manifest != other.manifest {
            out.push("manifest");
        }
        if self.setting != other.setting {
            out.push("setting");
        }
        if self.regime != other.regime {
            out.push("regime");
        }
        if self.k != other.k {
            out.push("k");
        }
        if self.seed != other.seed {
            out.push("seed");
        }
        if self.sigma != other.sigma {
            out.push("sigma");
        }
        if self.model != other.model {
            out.push("model");
        }
        let unseeded = |t: &TrainConfig| TrainConfig { seed: 0, ..t.clone() };
        if unseeded(&self.train) != unseeded(&other.train) {
            out.push("train");
        }
        out
    }
}
