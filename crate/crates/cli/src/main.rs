use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cxr_anomaly::corpus::{
    generate_synthetic_corpus, load_manifest, load_samples, FoldPlan, ManifestEntry, SynthOptions,
};
use cxr_anomaly::experiment::{self, ExperimentConfig, RunOptions, RunStatus};
use cxr_anomaly::scoring::{roc_auc, score_samples, write_scores, MetricsReport};
use cxr_anomaly::training::TrainedModel;
use cxr_anomaly::{Error, Result};

/// Reconstruction-error anomaly detection experiments.
///
/// Exit codes: 0 success, 1 config error, 2 data error, 3 numerical failure.
/// Set CXRAD_DETERMINISTIC=0 to allow non-deterministic reductions.
#[derive(Parser)]
#[command(name = "cxrad", version)]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's worker count.
    #[arg(long)]
    workers: Option<usize>,
    /// Override the config's output directory.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus and its manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 150)]
        normal: usize,
        #[arg(long, default_value_t = 50)]
        anomaly: usize,
        #[arg(long, default_value_t = 64)]
        side: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Build and audit the fold plan of a config.
    Plan {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Write the plan as JSON here instead of only summarizing it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one fold of a config without scoring it.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        fold: usize,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Score images with a trained checkpoint.
    Score {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Restrict to one fold's test set of this plan.
        #[arg(long, requires = "fold")]
        plan: Option<PathBuf>,
        #[arg(long, requires = "plan")]
        fold: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Run a full k-fold experiment: plan, train, score, aggregate.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Stop every fold after this many epochs (leaves a resumable run).
        #[arg(long, hide = true)]
        halt_after_epoch: Option<usize>,
    },
    /// Tabulate finished runs.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Continue an interrupted run.
    Resume {
        dir: PathBuf,
        /// Refuse to resume unless this config matches the persisted one.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
}

fn load_config(path: &Path, o: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = o.seed {
        cfg.seed = seed;
    }
    if let Some(w) = o.workers {
        cfg.workers = w;
    }
    if let Some(out) = &o.output {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_metrics(m: &MetricsReport) {
    let folds: Vec<String> = m.summary.per_fold_auc.iter().map(|a| format!("{a:.4}")).collect();
    println!("{} / {}", m.setting.caption(), m.regime.caption());
    println!("per-fold AUC: {}", folds.join(", "));
    println!(
        "AUC_mu {:.4}  AUC_sigma {:.4}  AUC_p {:.4}",
        m.summary.auc_mu, m.summary.auc_sigma, m.summary.auc_p
    );
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            out,
            normal,
            anomaly,
            side,
            seed,
        } => {
            let m = generate_synthetic_corpus(
                &out,
                &SynthOptions {
                    n_normal: normal,
                    n_anomaly: anomaly,
                    side,
                    seed,
                },
            )?;
            println!("wrote {} images and manifest.csv to {}", m.len(), out.display());
        }
        Command::Plan { config, overrides, out } => {
            let cfg = load_config(&config, &overrides)?;
            let plan = experiment::plan_for(&cfg)?;
            for f in &plan.folds {
                println!(
                    "fold {}: train {}  test normal {}  test anomaly {}",
                    f.index,
                    f.train_ids.len(),
                    f.test_normal_ids.len(),
                    f.test_anomaly_ids.len()
                );
            }
            if let Some(out) = out {
                let json = serde_json::to_string_pretty(&plan).expect("plan serializes");
                std::fs::write(&out, json).map_err(|e| Error::io(format!("writing {}", out.display()), e))?;
            }
        }
        Command::Train {
            config,
            fold,
            overrides,
        } => {
            let cfg = load_config(&config, &overrides)?;
            let model = experiment::train_fold(&cfg, fold)?;
            let last = model.history.last().expect("at least one epoch");
            println!(
                "fold {fold}: {} epochs, final loss {:.6}, checkpoint in {}",
                model.history.len(),
                last.loss,
                experiment::fold_dir(&cfg.output_dir, fold).display()
            );
        }
        Command::Score {
            checkpoint,
            manifest,
            plan,
            fold,
            out,
            workers,
        } => {
            let model = TrainedModel::load(&checkpoint)?;
            let manifest = load_manifest(&manifest)?;
            let (entries, fold_index): (Vec<&ManifestEntry>, usize) = match (plan, fold) {
                (Some(plan_path), Some(j)) => {
                    let text = std::fs::read_to_string(&plan_path)
                        .map_err(|e| Error::io(format!("reading {}", plan_path.display()), e))?;
                    let plan: FoldPlan = serde_json::from_str(&text)
                        .map_err(|e| Error::Data(format!("{}: {e}", plan_path.display())))?;
                    let f = plan
                        .folds
                        .get(j)
                        .ok_or_else(|| Error::Config(format!("fold {j} out of range")))?;
                    let ids = f.test_normal_ids.iter().chain(&f.test_anomaly_ids);
                    let entries = ids
                        .map(|id| {
                            manifest
                                .get(id)
                                .ok_or_else(|| Error::Data(format!("{id} not in manifest")))
                        })
                        .collect::<Result<_>>()?;
                    (entries, j)
                }
                _ => (manifest.entries().iter().collect(), model.fold),
            };
            let samples = load_samples(&manifest, &entries, model.model_config.input_side, workers)?;
            let records = score_samples(&model.cae, &samples, fold_index)?;
            write_scores(&out, &records)?;
            println!("scored {} images into {}", records.len(), out.display());
            if let Ok(auc) = roc_auc(&records) {
                println!("AUC {auc:.4}");
            }
        }
        Command::Run {
            config,
            overrides,
            halt_after_epoch,
        } => {
            let cfg = load_config(&config, &overrides)?;
            match experiment::run_experiment_with(&cfg, &RunOptions { halt_after_epoch })? {
                RunStatus::Complete(m) => print_metrics(&m),
                RunStatus::Halted => println!("halted; continue with `cxrad resume {}`", cfg.output_dir.display()),
            }
        }
        Command::Report { dirs, csv } => {
            let r = experiment::report(&dirs);
            print!("{}", r.to_text());
            if let Some(path) = csv {
                std::fs::write(&path, r.to_csv()).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
            }
            if !r.is_complete() {
                return Err(Error::IncompleteRuns(r.incomplete));
            }
        }
        Command::Resume { dir, config, workers } => {
            let mut given = config.map(|p| ExperimentConfig::load(&p)).transpose()?;
            if let (Some(cfg), Some(w)) = (given.as_mut(), workers) {
                cfg.workers = w;
            }
            let m = experiment::resume(&dir, given.as_ref())?;
            print_metrics(&m);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
