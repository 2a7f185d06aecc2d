use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::METRICS_FILE;
use crate::scoring::MetricsReport;

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub dir: PathBuf,
    pub metrics: MetricsReport,
}

/// Result table over a set of run directories. Directories without a
/// readable `metrics.json` are listed as incomplete.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub incomplete: Vec<PathBuf>,
}

pub fn report(dirs: &[impl AsRef<Path>]) -> Report {
    let mut rows = Vec::new();
    let mut incomplete = Vec::new();
    for d in dirs {
        let d = d.as_ref();
        match MetricsReport::load(&d.join(METRICS_FILE)) {
            Ok(metrics) => rows.push(ReportRow {
                dir: d.to_path_buf(),
                metrics,
            }),
            Err(e) => {
                log::debug!("{}: {e}", d.display());
                incomplete.push(d.to_path_buf());
            }
        }
    }
    Report { rows, incomplete }
}

impl Report {
    pub fn is_complete(&self) -> bool {
        self.incomplete.is_empty()
    }

    /// Aligned table: training case, regime, AUC_μ, AUC_σ, AUC_p.
    pub fn to_text(&self) -> String {
        let header = ["Training Cases", "Regime", "AUC_mu", "AUC_sigma", "AUC_p", "Config"];
        let body: Vec<[String; 6]> = self
            .rows
            .iter()
            .map(|r| {
                let m = &r.metrics;
                [
                    m.setting.caption().to_string(),
                    m.regime.caption().to_string(),
                    format!("{:.3}", m.summary.auc_mu),
                    format!("{:.3}", m.summary.auc_sigma),
                    format!("{:.3}", m.summary.auc_p),
                    m.config_hash.chars().take(12).collect(),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &body {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, cells: &[&str]| {
            let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, &w)| format!("{c:<w$}")).collect();
            writeln!(out, "{}", parts.join("  ").trim_end()).unwrap();
        };
        line(&mut out, &header);
        let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
        line(&mut out, &rule.iter().map(String::as_str).collect::<Vec<_>>());
        for row in &body {
            line(&mut out, &row.iter().map(String::as_str).collect::<Vec<_>>());
        }
        for d in &self.incomplete {
            writeln!(out, "incomplete: {}", d.display()).unwrap();
        }
        out
    }

    /// One CSV row per complete run at full precision.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dir,setting,regime,auc_mu,auc_sigma,auc_p,per_fold_auc,config_hash,seed\n");
        for r in &self.rows {
            let m = &r.metrics;
            let folds: Vec<String> = m.summary.per_fold_auc.iter().map(|a| a.to_string()).collect();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                csv_field(&r.dir.display().to_string()),
                m.setting,
                m.regime,
                m.summary.auc_mu,
                m.summary.auc_sigma,
                m.summary.auc_p,
                folds.join(";"),
                m.config_hash,
                m.seed
            )
            .unwrap();
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Setting;
    use crate::scoring::{AucSummary, SigmaKind};
    use crate::training::Regime;

    fn metrics(setting: Setting) -> MetricsReport {
        MetricsReport {
            regime: Regime::Cae,
            setting,
            summary: AucSummary {
                per_fold_auc: vec![0.74, 0.79, 0.765],
                auc_mu: 0.765,
                auc_sigma: 0.0204,
                auc_p: 0.7651,
            },
            sigma_kind: SigmaKind::Population,
            config_hash: "abcdef0123456789".into(),
            seed: 0,
        }
    }

    #[test]
    fn rows_and_incomplete_runs() {
        let root = tempfile::tempdir().unwrap();
        let mut dirs = Vec::new();
        for (i, s) in [Setting::Healthy, Setting::HealthyPlusPneumonia, Setting::Pneumonia]
            .into_iter()
            .enumerate()
        {
            let d = root.path().join(format!("run{i}"));
            std::fs::create_dir_all(&d).unwrap();
            metrics(s).save(&d.join(METRICS_FILE)).unwrap();
            dirs.push(d);
        }
        dirs.push(root.path().join("missing"));
        let r = report(&dirs);
        assert_eq!(r.rows.len(), 3);
        assert_eq!(r.incomplete, vec![root.path().join("missing")]);
        let text = r.to_text();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("Training Cases"));
        assert!(lines[2].starts_with("(i) Healthy ") && lines[2].contains("0.765"));
        assert!(lines[4].starts_with("(iii) Pneumonia"));
        assert!(lines[5].starts_with("incomplete:"));
        let col = lines[0].find("AUC_mu").unwrap();
        assert_eq!(&lines[3][col..col + 5], "0.765");
        assert_eq!(r.to_csv().lines().count(), 4);
        assert_eq!(report(&dirs), r);
    }
}
