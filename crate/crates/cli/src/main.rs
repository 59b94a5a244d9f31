//! Experiment runner: pretraining, probing, invariance reports, ablation
//! sweeps, and plot emission, driven by a TOML experiment config.
//!
//! Exit code 0 on success; on failure a machine-readable error record is
//! printed to stderr and the exit code is nonzero. `LMA_ARTIFACT_ROOT`
//! overrides the config's `output_dir`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lma_core::augment::LmaMode;
use lma_core::dataset::Split;
use lma_core::error::Error;
use lma_core::eval::{evaluate_shifted, invariance_report, train_linear_probe};
use lma_core::experiment::{
    build_dataset, emit_plots, load_artifact, load_config, run_pretrain, sweep_alpha, sweep_k,
    sweep_views, ExperimentConfig,
};
use lma_core::train::{load_model_checkpoint, SslMethod};

const ARTIFACT_ROOT_ENV: &str = "LMA_ARTIFACT_ROOT";

#[derive(Parser)]
#[command(
    name = "lma",
    about = "Local manifold augmentation: pretraining, evaluation, and ablation sweeps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Overrides for the most commonly swept config fields; the TOML file is the
/// full surface.
#[derive(Args, Clone)]
struct Overrides {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override policy.alpha.
    #[arg(long)]
    alpha: Option<f64>,
    /// Override policy.mode (lma | mix | off).
    #[arg(long)]
    mode: Option<String>,
    /// Override train.method (simsiam | mocov2).
    #[arg(long)]
    method: Option<String>,
    /// Override train.epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Override train.batch_size.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Override the seed list (comma separated).
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Override output_dir (the LMA_ARTIFACT_ROOT env var does the same).
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Print per-epoch progress.
    #[arg(long)]
    verbose: bool,
}

fn parse_mode(s: &str) -> Result<LmaMode, Error> {
    match s {
        "lma" => Ok(LmaMode::Lma),
        "mix" => Ok(LmaMode::Mix),
        "off" => Ok(LmaMode::Off),
        other => Err(Error::InvalidConfig(vec![format!(
            "unknown mode `{other}` (expected lma | mix | off)"
        )])),
    }
}

impl Overrides {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = load_config(&self.config)?;
        if let Some(alpha) = self.alpha {
            cfg.policy.alpha = alpha;
        }
        if let Some(mode) = &self.mode {
            cfg.policy.mode = parse_mode(mode)?;
        }
        if let Some(method) = &self.method {
            cfg.train.method = match method.as_str() {
                "simsiam" => SslMethod::Simsiam,
                "mocov2" => SslMethod::Mocov2,
                other => {
                    return Err(Error::InvalidConfig(vec![format!(
                        "unknown method `{other}`"
                    )]))
                }
            };
        }
        if let Some(epochs) = self.epochs {
            cfg.train.epochs = epochs;
        }
        if let Some(batch) = self.batch_size {
            cfg.train.batch_size = batch;
        }
        if let Some(seeds) = &self.seeds {
            cfg.seeds = seeds.clone();
        }
        if let Some(dir) = &self.output_dir {
            cfg.output_dir = dir.clone();
        }
        if let Ok(root) = std::env::var(ARTIFACT_ROOT_ENV) {
            cfg.output_dir = PathBuf::from(root);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain, probe, and report invariance for every seed in the config.
    Pretrain(Overrides),
    /// Train a linear probe on a stored model checkpoint.
    Probe {
        #[command(flatten)]
        overrides: Overrides,
        /// Model checkpoint (a checkpoints/*.json file from a run).
        #[arg(long)]
        checkpoint: PathBuf,
        /// Score the probe on a shifted dataset (manifest directory) instead
        /// of the config dataset's eval split.
        #[arg(long)]
        shifted: Option<PathBuf>,
    },
    /// Measure orbit invariance for a stored model checkpoint.
    Invariance {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// One run per (mode, alpha) cell with shared seeds.
    SweepAlpha {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, value_delimiter = ',', default_value = "0.0,0.3,1.0")]
        alphas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "lma,mix")]
        modes: Vec<String>,
    },
    /// Finite-view ablation; counts are integers or `inf`.
    SweepViews {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, value_delimiter = ',', default_value = "1,50,500,5000,inf")]
        counts: Vec<String>,
    },
    /// Neighborhood-size ablation with backend Fréchet scores.
    SweepK {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, value_delimiter = ',', default_value = "5,20,50")]
        ks: Vec<usize>,
    },
    /// Emit comparison plots from stored run directories.
    Plot {
        /// Run directories (each containing run.json).
        #[arg(long, value_delimiter = ',', required = true)]
        runs: Vec<PathBuf>,
        /// Output directory for the SVG/CSV files.
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Pretrain(overrides) => {
            let cfg = overrides.load()?;
            let artifact = run_pretrain(&cfg, overrides.verbose)?;
            println!("{}", serde_json::to_string_pretty(&artifact)?);
        }
        Command::Probe {
            overrides,
            checkpoint,
            shifted,
        } => {
            let cfg = overrides.load()?;
            let (model, _, _) = load_model_checkpoint(&checkpoint)?;
            let dataset = build_dataset(&cfg.dataset)?;
            let (probe, report) = train_linear_probe(&model.backbone, &dataset, &cfg.probe)?;
            match shifted {
                Some(dir) => {
                    let shifted_ds = lma_core::dataset::load_dataset("manifest", &dir)?;
                    let top1 = evaluate_shifted(&model.backbone, &probe, &shifted_ds)?;
                    println!(
                        "{}",
                        serde_json::to_string_pretty(&serde_json::json!({
                            "shifted_top1": top1,
                            "source_report": report,
                        }))?
                    );
                }
                None => println!("{}", serde_json::to_string_pretty(&report)?),
            }
        }
        Command::Invariance {
            overrides,
            checkpoint,
        } => {
            let cfg = overrides.load()?;
            let (model, _, _) = load_model_checkpoint(&checkpoint)?;
            let dataset = build_dataset(&cfg.dataset)?;
            let split = if dataset.split_ids(Split::Val).is_empty() {
                Split::Train
            } else {
                Split::Val
            };
            let report = invariance_report(&model.backbone, &dataset, split)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::SweepAlpha {
            overrides,
            alphas,
            modes,
        } => {
            let cfg = overrides.load()?;
            let modes: Vec<LmaMode> = modes
                .iter()
                .map(|m| parse_mode(m))
                .collect::<Result<_, _>>()?;
            let (rows, artifacts) = sweep_alpha(&cfg, &alphas, &modes, overrides.verbose)?;
            let plots = emit_plots(&artifacts, &cfg.output_dir.join("plots"))?;
            println!(
                "{}",
                serde_json::to_string_pretty(&serde_json::json!({
                    "table": rows,
                    "plots": plots,
                }))?
            );
        }
        Command::SweepViews { overrides, counts } => {
            let cfg = overrides.load()?;
            let parsed: Vec<Option<usize>> = counts
                .iter()
                .map(|c| {
                    if c == "inf" {
                        Ok(None)
                    } else {
                        c.parse::<usize>().map(Some).map_err(|_| {
                            Error::InvalidConfig(vec![format!(
                                "count `{c}` is neither an integer nor `inf`"
                            )])
                        })
                    }
                })
                .collect::<Result<_, _>>()?;
            let (rows, artifacts) = sweep_views(&cfg, &parsed, overrides.verbose)?;
            let plots = emit_plots(&artifacts, &cfg.output_dir.join("plots"))?;
            println!(
                "{}",
                serde_json::to_string_pretty(&serde_json::json!({
                    "table": rows,
                    "plots": plots,
                }))?
            );
        }
        Command::SweepK { overrides, ks } => {
            let cfg = overrides.load()?;
            let (rows, artifacts) = sweep_k(&cfg, &ks, overrides.verbose)?;
            let plots = emit_plots(&artifacts, &cfg.output_dir.join("plots"))?;
            println!(
                "{}",
                serde_json::to_string_pretty(&serde_json::json!({
                    "table": rows,
                    "plots": plots,
                }))?
            );
        }
        Command::Plot { runs, out } => {
            let artifacts: Vec<_> = runs
                .iter()
                .map(|dir| load_artifact(dir))
                .collect::<Result<_, _>>()?;
            let plots = emit_plots(&artifacts, &out)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&serde_json::json!({ "plots": plots }))?
            );
        }
    }
    Ok(())
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidConfig(_) => "invalid-config",
        Error::ArtifactExists(_) => "artifact-exists",
        Error::UnknownDataset(_) | Error::MissingSplit { .. } | Error::SplitCountMismatch { .. } => {
            "dataset"
        }
        Error::Checkpoint { .. } => "checkpoint",
        Error::Io { .. } => "io",
        Error::NonFiniteLoss { .. } => "training-diverged",
        _ => "runtime",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = serde_json::json!({
                "error": {
                    "kind": error_kind(&e),
                    "message": e.to_string(),
                }
            });
            eprintln!("{record}");
            ExitCode::from(1)
        }
    }
}
