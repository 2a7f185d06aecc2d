//! End-to-end k-fold experiments: plan, train, score, aggregate, and the
//! on-disk layout that makes them resumable.
//!
//! ```text
//! <output_dir>/
//!   config.toml      persisted ExperimentConfig
//!   plan.json        FoldPlan
//!   run.json         resolved internals (optimizer constants, init, kernel mode, fold seeds)
//!   fold_<j>/
//!     epoch_<e>.safetensors   periodic checkpoints
//!     final.safetensors
//!     loss.csv                epoch,loss[,disc_loss]
//!     scores.csv              sample_id,fold,score,is_anomaly
//!   metrics.json
//! ```

mod config;
mod report;

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::json;

pub use config::{ExperimentConfig, SCHEMA_VERSION};
pub use report::{report, Report, ReportRow};

use crate::corpus::{load_manifest, load_samples, make_fold_plan, Fold, FoldPlan, ImageSample, Manifest};
use crate::error::{Error, Result};
use crate::nets::kernel_mode;
use crate::scoring::{aggregate, read_scores, score_samples, write_scores, MetricsReport, ScoreRecord};
use crate::seed::{derive_seed, STREAM_FOLD};
use crate::training::{
    EpochRecord, NoObserver, TrainConfig, TrainedModel, Trainer, ADAM_BETAS, ADAM_EPS, RMSPROP_ALPHA, RMSPROP_EPS,
};

pub const CONFIG_FILE: &str = "config.toml";
pub const PLAN_FILE: &str = "plan.json";
pub const RUN_FILE: &str = "run.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const LOSS_FILE: &str = "loss.csv";
pub const SCORES_FILE: &str = "scores.csv";
pub const FINAL_CHECKPOINT: &str = "final.safetensors";

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Stop every fold once it has trained this many epochs, without writing
    /// a checkpoint for the stopping point. Used to rehearse interruptions.
    pub halt_after_epoch: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RunStatus {
    Complete(MetricsReport),
    Halted,
}

pub fn fold_dir(output_dir: &Path, fold: usize) -> PathBuf {
    output_dir.join(format!("fold_{fold}"))
}

pub fn epoch_checkpoint_name(epochs_done: usize) -> String {
    format!("epoch_{epochs_done:05}.safetensors")
}

/// Seed used to train fold `fold`.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    derive_seed(seed, &[STREAM_FOLD, fold as u64])
}

/// Final checkpoint if present, else the periodic one with the most epochs.
pub fn latest_checkpoint(dir: &Path) -> Option<PathBuf> {
    let last = dir.join(FINAL_CHECKPOINT);
    if last.is_file() {
        return Some(last);
    }
    fs::read_dir(dir)
        .ok()?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let epoch: usize = name
                .strip_prefix("epoch_")?
                .strip_suffix(".safetensors")?
                .parse()
                .ok()?;
            Some((epoch, e.path()))
        })
        .max_by_key(|(epoch, _)| *epoch)
        .map(|(_, p)| p)
}

fn io_err(action: &str, path: &Path) -> impl FnOnce(std::io::Error) -> Error {
    let context = format!("{action} {}", path.display());
    move |e| Error::io(context, e)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err("writing", &tmp))?;
    fs::rename(&tmp, path).map_err(io_err("renaming", &tmp))
}

pub fn write_loss_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let adversarial = history.iter().any(|r| r.disc_loss.is_some());
    let mut out = String::from(if adversarial {
        "epoch,loss,disc_loss\n"
    } else {
        "epoch,loss\n"
    });
    for r in history {
        match r.disc_loss {
            Some(d) => out.push_str(&format!("{},{},{}\n", r.epoch, r.loss, d)),
            None => out.push_str(&format!("{},{}\n", r.epoch, r.loss)),
        }
    }
    write_atomic(path, out.as_bytes())
}

/// Makes the manifest path absolute so that the persisted config, and its
/// hash, do not depend on the working directory.
fn resolve_manifest(cfg: &mut ExperimentConfig) -> Result<()> {
    cfg.manifest = fs::canonicalize(&cfg.manifest)
        .map_err(|e| Error::Data(format!("manifest {} not found: {e}", cfg.manifest.display())))?;
    Ok(())
}

fn run_record(cfg: &ExperimentConfig) -> serde_json::Value {
    json!({
        "config_hash": cfg.hash(),
        "crate_version": env!("CARGO_PKG_VERSION"),
        "kernel_mode": kernel_mode().as_str(),
        "optimizer": {
            "adam_beta1": ADAM_BETAS.0,
            "adam_beta2": ADAM_BETAS.1,
            "adam_eps": ADAM_EPS,
            "rmsprop_alpha": RMSPROP_ALPHA,
            "rmsprop_eps": RMSPROP_EPS,
        },
        "init": "weights and biases uniform in ±1/sqrt(fan_in); fan_in = in_channels·k² for convolutions and transposed convolutions, in_features for linear layers; batch-norm scale 1, shift 0",
        "batchnorm": {"eps": 1e-5, "momentum": 0.1},
        "drop_last": true,
        "evaluation": "final-epoch parameters, batch-norm running statistics",
        "fold_seeds": (0..cfg.k).map(|j| fold_seed(cfg.seed, j)).collect::<Vec<_>>(),
    })
}

/// Runs (or continues) the experiment described by `cfg` in
/// `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    match run_experiment_with(cfg, &RunOptions::default())? {
        RunStatus::Complete(r) => Ok(r),
        RunStatus::Halted => unreachable!("no halt requested"),
    }
}

/// Validates `cfg`, claims (or re-enters) its output directory and writes
/// the config, plan and run records.
fn prepare(cfg: &ExperimentConfig) -> Result<(ExperimentConfig, Manifest, FoldPlan)> {
    let mut cfg = cfg.clone();
    cfg.validate()?;
    resolve_manifest(&mut cfg)?;
    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out).map_err(io_err("creating", &out))?;

    let config_path = out.join(CONFIG_FILE);
    if config_path.is_file() {
        let persisted = ExperimentConfig::load(&config_path)?;
        if persisted.hash() != cfg.hash() {
            return Err(Error::ConfigMismatch(format!(
                "{} holds a run with different {}",
                out.display(),
                persisted.differences(&cfg).join(", ")
            )));
        }
    } else {
        write_atomic(&config_path, cfg.to_toml().as_bytes())?;
    }

    let manifest = load_manifest(&cfg.manifest)?;
    let plan = audited_plan(&manifest, &cfg)?;
    let plan_json = serde_json::to_string_pretty(&plan).expect("plan serializes");
    write_atomic(&out.join(PLAN_FILE), plan_json.as_bytes())?;
    let run_json = serde_json::to_string_pretty(&run_record(&cfg)).expect("run record serializes");
    write_atomic(&out.join(RUN_FILE), run_json.as_bytes())?;
    Ok((cfg, manifest, plan))
}

fn audited_plan(manifest: &Manifest, cfg: &ExperimentConfig) -> Result<FoldPlan> {
    let plan = make_fold_plan(manifest, cfg.setting, cfg.k, cfg.seed)?;
    let violations = plan.audit(manifest);
    if !violations.is_empty() {
        return Err(Error::Data(format!(
            "fold plan audit failed: {}",
            violations.join("; ")
        )));
    }
    Ok(plan)
}

fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))
}

/// Loads every image any of `folds` needs, in manifest order.
fn load_fold_samples(manifest: &Manifest, folds: &[&Fold], cfg: &ExperimentConfig) -> Result<Vec<ImageSample>> {
    if folds.is_empty() {
        return Ok(Vec::new());
    }
    let ids: HashSet<&str> = folds
        .iter()
        .flat_map(|f| f.train_ids.iter().chain(&f.test_normal_ids).chain(&f.test_anomaly_ids))
        .map(String::as_str)
        .collect();
    let wanted: Vec<_> = manifest
        .entries()
        .iter()
        .filter(|e| ids.contains(e.sample_id.as_str()))
        .collect();
    log::info!("loading {} images", wanted.len());
    load_samples(manifest, &wanted, cfg.model.input_side, cfg.workers)
}

pub fn run_experiment_with(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunStatus> {
    let (cfg, manifest, plan) = prepare(cfg)?;
    let out = cfg.output_dir.clone();
    let results: Vec<Result<Option<Vec<ScoreRecord>>>> = worker_pool(cfg.workers)?.install(|| {
        let pending: Vec<&Fold> = plan
            .folds
            .iter()
            .filter(|f| !fold_dir(&out, f.index).join(SCORES_FILE).is_file())
            .collect();
        let samples = match load_fold_samples(&manifest, &pending, &cfg) {
            Ok(s) => s,
            Err(e) => return vec![Err(e)],
        };
        let by_id: HashMap<&str, &ImageSample> = samples.iter().map(|s| (s.sample_id.as_str(), s)).collect();
        plan.folds
            .par_iter()
            .map(|fold| run_fold(&cfg, fold, &by_id, opts).map_err(|e| e.in_fold(fold.index)))
            .collect()
    });

    let mut fold_records = Vec::with_capacity(cfg.k);
    let mut halted = false;
    for r in results {
        match r? {
            Some(records) => fold_records.push(records),
            None => halted = true,
        }
    }
    if halted {
        return Ok(RunStatus::Halted);
    }
    let summary = aggregate(&fold_records, cfg.sigma)?;
    let report = MetricsReport {
        regime: cfg.regime,
        setting: cfg.setting,
        summary,
        sigma_kind: cfg.sigma,
        config_hash: cfg.hash(),
        seed: cfg.seed,
    };
    report.save(&out.join(METRICS_FILE))?;
    log::info!(
        "{} / {}: AUC_mu {:.3} AUC_sigma {:.3} AUC_p {:.3}",
        cfg.setting.caption(),
        cfg.regime.caption(),
        report.summary.auc_mu,
        report.summary.auc_sigma,
        report.summary.auc_p
    );
    Ok(RunStatus::Complete(report))
}

fn lookup<'a>(by_id: &HashMap<&str, &'a ImageSample>, ids: &[String]) -> Result<Vec<&'a ImageSample>> {
    ids.iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::Data(format!("sample {id} was not loaded")))
        })
        .collect()
}

fn run_fold(
    cfg: &ExperimentConfig,
    fold: &Fold,
    by_id: &HashMap<&str, &ImageSample>,
    opts: &RunOptions,
) -> Result<Option<Vec<ScoreRecord>>> {
    let scores_path = fold_dir(&cfg.output_dir, fold.index).join(SCORES_FILE);
    if scores_path.is_file() {
        return read_scores(&scores_path).map(Some);
    }
    let Some(trainer) = fit_fold(cfg, fold, by_id, opts)? else {
        return Ok(None);
    };
    let mut tests: Vec<ImageSample> = lookup(by_id, &fold.test_normal_ids)?.into_iter().cloned().collect();
    tests.extend(lookup(by_id, &fold.test_anomaly_ids)?.into_iter().cloned());
    let records = score_samples(trainer.cae(), &tests, fold.index)?;
    let tmp = scores_path.with_extension("tmp");
    write_scores(&tmp, &records)?;
    fs::rename(&tmp, &scores_path).map_err(io_err("renaming", &tmp))?;
    Ok(Some(records))
}

/// Trains one fold to completion from its latest checkpoint, or from scratch.
/// Returns `None` if halted early by `opts`.
fn fit_fold<'a>(
    cfg: &ExperimentConfig,
    fold: &Fold,
    by_id: &HashMap<&str, &'a ImageSample>,
    opts: &RunOptions,
) -> Result<Option<Trainer<'a>>> {
    let dir = fold_dir(&cfg.output_dir, fold.index);
    fs::create_dir_all(&dir).map_err(io_err("creating", &dir))?;
    let train_cfg = TrainConfig {
        seed: fold_seed(cfg.seed, fold.index),
        ..cfg.train.clone()
    };
    let train = lookup(by_id, &fold.train_ids)?;
    let mut trainer = match latest_checkpoint(&dir) {
        Some(path) => {
            let t = Trainer::resume(&train, &path)?;
            if t.train_config() != &train_cfg || t.model_config() != &cfg.model || t.fold() != fold.index {
                return Err(Error::ConfigMismatch(format!(
                    "checkpoint {} was written by a different configuration",
                    path.display()
                )));
            }
            log::info!(
                "fold {}: resuming from {} after {} epochs",
                fold.index,
                path.display(),
                t.epochs_done()
            );
            t
        }
        None => Trainer::new(&train, &cfg.model, &train_cfg, fold.index)?,
    };

    let every = train_cfg.checkpoint_every;
    while !trainer.is_finished() {
        if opts.halt_after_epoch.is_some_and(|h| trainer.epochs_done() >= h) {
            return Ok(None);
        }
        let rec = trainer.run_epoch(&mut NoObserver)?;
        let done = trainer.epochs_done();
        if done % every == 0 && !trainer.is_finished() {
            trainer.save_checkpoint(&dir.join(epoch_checkpoint_name(done)))?;
            write_loss_csv(&dir.join(LOSS_FILE), trainer.history())?;
            log::info!(
                "fold {}: epoch {done}/{} loss {:.6}",
                fold.index,
                train_cfg.epochs,
                rec.loss
            );
        }
    }
    if !dir.join(FINAL_CHECKPOINT).is_file() {
        trainer.save_checkpoint(&dir.join(FINAL_CHECKPOINT))?;
    }
    write_loss_csv(&dir.join(LOSS_FILE), trainer.history())?;
    Ok(Some(trainer))
}

/// Trains a single fold of the experiment into `<output_dir>/fold_<j>`
/// without scoring it.
pub fn train_fold(cfg: &ExperimentConfig, fold_index: usize) -> Result<TrainedModel> {
    let (cfg, manifest, plan) = prepare(cfg)?;
    let fold = plan
        .folds
        .get(fold_index)
        .ok_or_else(|| Error::Config(format!("fold {fold_index} out of range for k = {}", cfg.k)))?;
    worker_pool(cfg.workers)?.install(|| {
        let samples = load_fold_samples(&manifest, &[fold], &cfg)?;
        let by_id: HashMap<&str, &ImageSample> = samples.iter().map(|s| (s.sample_id.as_str(), s)).collect();
        let trainer = fit_fold(&cfg, fold, &by_id, &RunOptions::default())
            .map_err(|e| e.in_fold(fold_index))?
            .expect("no halt requested");
        Ok(trainer.into_model())
    })
}

/// Continues an interrupted run in `dir`. With `config`, refuses to continue
/// if it differs from the persisted one in anything that affects results.
pub fn resume(dir: &Path, config: Option<&ExperimentConfig>) -> Result<MetricsReport> {
    let config_path = dir.join(CONFIG_FILE);
    if !config_path.is_file() {
        return Err(Error::NothingToResume(dir.to_path_buf()));
    }
    let mut persisted = ExperimentConfig::load(&config_path)?;
    let started = (0..persisted.k).any(|j| {
        let d = fold_dir(dir, j);
        latest_checkpoint(&d).is_some() || d.join(SCORES_FILE).is_file()
    });
    if !started {
        return Err(Error::NothingToResume(dir.to_path_buf()));
    }
    if let Some(given) = config {
        let mut given = given.clone();
        given.validate()?;
        resolve_manifest(&mut given)?;
        let diff = persisted.differences(&given);
        if !diff.is_empty() {
            return Err(Error::ConfigMismatch(format!(
                "{} was started with different {}",
                dir.display(),
                diff.join(", ")
            )));
        }
        persisted.workers = given.workers;
    }
    persisted.output_dir = dir.to_path_buf();
    run_experiment(&persisted)
}

/// Builds and audits the fold plan for a config without training.
pub fn plan_for(cfg: &ExperimentConfig) -> Result<FoldPlan> {
    let manifest = load_manifest(&cfg.manifest)?;
    audited_plan(&manifest, cfg)
}
