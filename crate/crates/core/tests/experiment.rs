use std::fs;
use std::path::{Path, PathBuf};

use cxr_anomaly::corpus::{generate_synthetic_corpus, Setting, SynthOptions};
use cxr_anomaly::experiment::{
    self, fold_dir, resume, run_experiment, run_experiment_with, ExperimentConfig, RunOptions, RunStatus,
};
use cxr_anomaly::nets::ModelConfig;
use cxr_anomaly::scoring::MetricsReport;
use cxr_anomaly::training::{Regime, TrainConfig};
use cxr_anomaly::Error;

fn corpus(root: &Path) -> PathBuf {
    let dir = root.join("corpus");
    generate_synthetic_corpus(
        &dir,
        &SynthOptions {
            n_normal: 18,
            n_anomaly: 9,
            side: 16,
            seed: 4,
        },
    )
    .unwrap();
    dir.join("manifest.csv")
}

fn tiny(manifest: &Path, out: PathBuf, regime: Regime) -> ExperimentConfig {
    ExperimentConfig {
        model: ModelConfig::tiny(),
        train: TrainConfig {
            epochs: 6,
            batch_size: 4,
            checkpoint_every: 2,
            ..TrainConfig::desk(regime)
        },
        seed: 17,
        ..ExperimentConfig::desk(manifest, out, Setting::Healthy, regime)
    }
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn run_writes_every_artifact() {
    let root = tempfile::tempdir().unwrap();
    let manifest = corpus(root.path());
    let cfg = tiny(&manifest, root.path().join("run"), Regime::VanillaAdv);
    let report = run_experiment(&cfg).unwrap();
    let out = &cfg.output_dir;
    for f in ["config.toml", "plan.json", "run.json", "metrics.json"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    assert_eq!(report.summary.per_fold_auc.len(), 3);
    assert_eq!(report.config_hash, {
        let mut c = cfg.clone();
        c.manifest = fs::canonicalize(&manifest).unwrap();
        c.hash()
    });
    assert_eq!(MetricsReport::load(&out.join("metrics.json")).unwrap(), report);
    let run: serde_json::Value = serde_json::from_str(&read(&out.join("run.json"))).unwrap();
    assert_eq!(run["drop_last"], true);
    assert_eq!(run["optimizer"]["adam_beta2"], 0.999);
    assert_eq!(run["kernel_mode"], "deterministic");

    for j in 0..3 {
        let d = fold_dir(out, j);
        for f in [
            "epoch_00002.safetensors",
            "epoch_00004.safetensors",
            "final.safetensors",
        ] {
            assert!(d.join(f).is_file(), "fold {j} {f}");
        }
        let loss = read(&d.join("loss.csv"));
        let lines: Vec<&str> = loss.lines().collect();
        assert_eq!(lines[0], "epoch,loss,disc_loss");
        assert_eq!(lines.len(), 7);
        let scores = read(&d.join("scores.csv"));
        assert!(scores.starts_with("sample_id,fold,score,is_anomaly\n"));
        // 6 or 7 normals and 3 anomalies per fold.
        assert!((10..=11).contains(&scores.lines().count()));
        let model = cxr_anomaly::training::TrainedModel::load(&d.join("final.safetensors")).unwrap();
        assert_eq!((model.fold, model.history.len()), (j, 6));
        assert!(model.discriminator.is_some());
        assert_eq!(model.train_config.seed, experiment::fold_seed(17, j));
    }

    // Re-entering a finished run is idempotent.
    assert_eq!(run_experiment(&cfg).unwrap(), report);
}

fn interrupted_equals_uninterrupted(regime: Regime) {
    let root = tempfile::tempdir().unwrap();
    let manifest = corpus(root.path());
    let straight = tiny(&manifest, root.path().join("straight"), regime);
    let expected = run_experiment(&straight).unwrap();

    let broken = tiny(&manifest, root.path().join("broken"), regime);
    let status = run_experiment_with(
        &broken,
        &RunOptions {
            halt_after_epoch: Some(3),
        },
    )
    .unwrap();
    assert_eq!(status, RunStatus::Halted);
    assert!(!broken.output_dir.join("metrics.json").exists());
    // Epoch 3 was lost; resuming restarts from the epoch-2 checkpoint.
    let latest = experiment::latest_checkpoint(&fold_dir(&broken.output_dir, 0)).unwrap();
    assert!(latest.ends_with("epoch_00002.safetensors"));

    let resumed = resume(&broken.output_dir, Some(&broken)).unwrap();
    assert_eq!(resumed, expected);
    for j in 0..3 {
        for f in ["loss.csv", "scores.csv"] {
            assert_eq!(
                read(&fold_dir(&broken.output_dir, j).join(f)),
                read(&fold_dir(&straight.output_dir, j).join(f)),
                "fold {j} {f}"
            );
        }
    }
}

#[test]
fn resumed_cae_run_matches_uninterrupted_run() {
    interrupted_equals_uninterrupted(Regime::Cae);
}

#[test]
fn resumed_wasserstein_run_matches_uninterrupted_run() {
    interrupted_equals_uninterrupted(Regime::WassersteinAdv);
}

#[test]
fn resume_refusals() {
    let root = tempfile::tempdir().unwrap();
    let manifest = corpus(root.path());
    let empty = root.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    let err = resume(&empty, None).unwrap_err();
    assert!(matches!(err, Error::NothingToResume(_)));
    assert!(err.to_string().contains("nothing to resume"));

    let cfg = tiny(&manifest, root.path().join("run"), Regime::Cae);
    let halt = RunOptions {
        halt_after_epoch: Some(3),
    };
    run_experiment_with(&cfg, &halt).unwrap();
    let edited = ExperimentConfig {
        model: ModelConfig {
            latent_dim: 6,
            ..ModelConfig::tiny()
        },
        ..cfg.clone()
    };
    let err = resume(&cfg.output_dir, Some(&edited)).unwrap_err();
    assert!(err.to_string().contains("config mismatch"), "{err}");
    assert!(err.to_string().contains("model"), "{err}");
    assert_eq!(err.exit_code(), 1);
    // Starting a different experiment in the same directory is refused too.
    assert!(matches!(run_experiment(&edited), Err(Error::ConfigMismatch(_))));

    let ckpt = experiment::latest_checkpoint(&fold_dir(&cfg.output_dir, 1)).unwrap();
    fs::write(&ckpt, b"not a checkpoint").unwrap();
    let err = resume(&cfg.output_dir, None).unwrap_err();
    assert!(err.to_string().contains("corrupt checkpoint"), "{err}");
}

#[test]
fn worker_count_does_not_change_results() {
    let root = tempfile::tempdir().unwrap();
    let manifest = corpus(root.path());
    let one = ExperimentConfig {
        workers: 1,
        ..tiny(&manifest, root.path().join("w1"), Regime::Cae)
    };
    let four = ExperimentConfig {
        workers: 4,
        ..tiny(&manifest, root.path().join("w4"), Regime::Cae)
    };
    assert_eq!(run_experiment(&one).unwrap(), run_experiment(&four).unwrap());
    for j in 0..3 {
        assert_eq!(
            read(&fold_dir(&one.output_dir, j).join("scores.csv")),
            read(&fold_dir(&four.output_dir, j).join("scores.csv"))
        );
    }
}

#[test]
fn single_fold_training_writes_a_loadable_checkpoint() {
    let root = tempfile::tempdir().unwrap();
    let manifest = corpus(root.path());
    let cfg = tiny(&manifest, root.path().join("run"), Regime::Cae);
    let model = experiment::train_fold(&cfg, 2).unwrap();
    assert_eq!(model.history.len(), 6);
    assert!(fold_dir(&cfg.output_dir, 2).join("final.safetensors").is_file());
    assert!(!fold_dir(&cfg.output_dir, 0).exists());
    assert!(matches!(experiment::train_fold(&cfg, 3), Err(Error::Config(_))));
    // The full run picks the trained fold up instead of retraining it.
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.summary.per_fold_auc.len(), 3);
}

#[test]
fn missing_manifest_is_a_data_error() {
    let root = tempfile::tempdir().unwrap();
    let cfg = tiny(&root.path().join("nope.csv"), root.path().join("run"), Regime::Cae);
    let err = run_experiment(&cfg).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}
