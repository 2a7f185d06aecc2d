//! Reconstruction-error scores and ROC AUC summaries.

use std::path::Path;

use ndarray::{s, Array4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ImageSample, Setting};
use crate::error::{Error, Result};
use crate::nets::Cae;
use crate::training::Regime;

/// Images per inference batch. Scores do not depend on it.
pub const SCORE_BATCH: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub sample_id: String,
    pub fold: usize,
    /// Mean per-pixel squared reconstruction error.
    pub score: f64,
    #[serde(with = "bool_as_int")]
    pub is_anomaly: bool,
}

mod bool_as_int {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(*v as u8)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(D::Error::custom(format!("is_anomaly must be 0 or 1, got {v}"))),
        }
    }
}

/// Per-image mean squared error between `input` and `output`.
pub fn reconstruction_errors(input: &Array4<f64>, output: &Array4<f64>) -> Result<Vec<f64>> {
    if input.dim() != output.dim() {
        return Err(Error::Shape {
            expected: format!("{:?}", input.dim()),
            actual: format!("{:?}", output.dim()),
        });
    }
    Ok(input
        .outer_iter()
        .zip(output.outer_iter())
        .map(|(a, b)| {
            let n = a.len() as f64;
            a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n
        })
        .collect())
}

/// Scores every sample with the autoencoder in inference mode. Batches are
/// evaluated in parallel on the current rayon pool; output order follows
/// `samples`.
pub fn score_samples(cae: &Cae, samples: &[ImageSample], fold: usize) -> Result<Vec<ScoreRecord>> {
    let side = cae.config().input_side;
    for smp in samples {
        if smp.pixels.dim() != (side, side) {
            return Err(Error::Shape {
                expected: format!("{side}×{side} pixels"),
                actual: format!("{:?} for {}", smp.pixels.dim(), smp.sample_id),
            });
        }
    }
    let batches: Vec<Vec<f64>> = samples
        .par_chunks(SCORE_BATCH)
        .map(|chunk| {
            let mut x = Array4::<f64>::zeros((chunk.len(), 1, side, side));
            for (b, smp) in chunk.iter().enumerate() {
                x.slice_mut(s![b, 0, .., ..])
                    .zip_mut_with(&smp.pixels, |d, &p| *d = p as f64);
            }
            let xhat = cae.reconstruct(&x)?;
            reconstruction_errors(&x, &xhat)
        })
        .collect::<Result<_>>()?;
    let records: Vec<ScoreRecord> = samples
        .iter()
        .zip(batches.into_iter().flatten())
        .map(|(smp, score)| ScoreRecord {
            sample_id: smp.sample_id.clone(),
            fold,
            score,
            is_anomaly: smp.label.is_anomaly(),
        })
        .collect();
    if let Some(r) = records.iter().find(|r| !r.score.is_finite()) {
        return Err(Error::Numerical {
            fold,
            epoch: 0,
            detail: format!("non-finite score for {}", r.sample_id),
        });
    }
    Ok(records)
}

/// ROC AUC as the Mann–Whitney statistic with midranks for ties.
pub fn roc_auc_scores(scores: &[f64], is_anomaly: &[bool]) -> Result<f64> {
    assert_eq!(scores.len(), is_anomaly.len());
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Data("ROC AUC needs finite scores".into()));
    }
    let n_pos = is_anomaly.iter().filter(|&&a| a).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Data(format!(
            "ROC AUC needs both classes, got {n_pos} anomalies and {n_neg} normals"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum of the anomalies, kept integral.
    let mut pos_rank2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share the midrank (i+j+2)/2.
        let mid2 = (i + j + 2) as u64;
        let pos_in_run = order[i..=j].iter().filter(|&&k| is_anomaly[k]).count() as u64;
        pos_rank2 += mid2 * pos_in_run;
        i = j + 1;
    }
    let (p, q) = (n_pos as u64, n_neg as u64);
    let u2 = pos_rank2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * q) as f64)
}

pub fn roc_auc(records: &[ScoreRecord]) -> Result<f64> {
    let scores: Vec<f64> = records.iter().map(|r| r.score).collect();
    let labels: Vec<bool> = records.iter().map(|r| r.is_anomaly).collect();
    roc_auc_scores(&scores, &labels)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaKind {
    /// Divide by k.
    #[default]
    Population,
    /// Divide by k − 1.
    Sample,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AucSummary {
    pub per_fold_auc: Vec<f64>,
    pub auc_mu: f64,
    pub auc_sigma: f64,
    pub auc_p: f64,
}

pub fn mean_and_sigma(values: &[f64], kind: SigmaKind) -> (f64, f64) {
    let k = values.len() as f64;
    let mu = values.iter().sum::<f64>() / k;
    let ss = values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>();
    let denom = match kind {
        SigmaKind::Population => k,
        SigmaKind::Sample => k - 1.0,
    };
    let sigma = if denom > 0.0 { (ss / denom).sqrt() } else { 0.0 };
    (mu, sigma)
}

/// Per-fold AUCs, their mean and spread, and the AUC of all folds' raw
/// scores pooled together.
pub fn aggregate(fold_records: &[Vec<ScoreRecord>], sigma: SigmaKind) -> Result<AucSummary> {
    if fold_records.is_empty() {
        return Err(Error::Data("no folds to aggregate".into()));
    }
    let per_fold_auc = fold_records.iter().map(|r| roc_auc(r)).collect::<Result<Vec<_>>>()?;
    let (auc_mu, auc_sigma) = mean_and_sigma(&per_fold_auc, sigma);
    let pooled: Vec<ScoreRecord> = fold_records.iter().flatten().cloned().collect();
    Ok(AucSummary {
        auc_p: roc_auc(&pooled)?,
        per_fold_auc,
        auc_mu,
        auc_sigma,
    })
}

/// Summary of one experiment as written to `metrics.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub regime: Regime,
    pub setting: Setting,
    #[serde(flatten)]
    pub summary: AucSummary,
    pub sigma_kind: SigmaKind,
    pub config_hash: String,
    pub seed: u64,
}

impl MetricsReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }
}

/// Writes `sample_id,fold,score,is_anomaly`.
pub fn write_scores(path: &Path, records: &[ScoreRecord]) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in records {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRecord>> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}
