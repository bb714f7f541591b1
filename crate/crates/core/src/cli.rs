//! Command-line interface.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::data::{generate_synthetic, write_atomic, DatasetBundle, RunConfig};
use crate::error::{Error, Result};
use crate::model::MixadModel;
use crate::pipeline::{self, CHECKPOINT, REPORT, SEGMENTS, TRAIN_LOG};
use crate::training::write_log;

#[derive(Parser, Debug)]
#[command(
    name = "mixad",
    version,
    about = "Memory-augmented graph autoencoder for explainable time-series anomaly detection"
)]
pub struct Cli {
    /// Overrides the seed from the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Flat key = value configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (dataset directory for `synth`, run directory otherwise).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic dataset.
    Synth,
    /// Train on a dataset and write the best checkpoint and the loss log.
    Train {
        #[arg(long)]
        data: PathBuf,
    },
    /// Score the test split: attention trace, scores and threshold.
    Score {
        #[arg(long)]
        data: PathBuf,
        /// Also dump the eval-mode adjacency matrix.
        #[arg(long)]
        adjacency: bool,
    },
    /// Explain flagged segments from the scores and threshold.
    Interpret,
    /// Compute detection and interpretation metrics.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
    },
    /// Generate data, train, score, interpret and evaluate.
    RunAll {
        #[arg(long)]
        adjacency: bool,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.sync_seed();
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cli: &Cli) -> Result<&Path> {
    let dir = cli.out.as_deref().ok_or_else(|| Error::invalid("--out is required"))?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(dir)
}

fn train_into(run: &Path, bundle: &DatasetBundle, cfg: &RunConfig) -> Result<MixadModel> {
    let outcome = pipeline::train_bundle(bundle, &cfg.train)?;
    outcome.model.save(&run.join(CHECKPOINT))?;
    write_log(&run.join(TRAIN_LOG), &outcome.log)?;
    write_atomic(&run.join("config.txt"), cfg.to_text().as_bytes())?;
    log::info!("best validation loss {:.6} at epoch {}", outcome.best_val, outcome.best_epoch);
    Ok(outcome.model)
}

fn score_into(run: &Path, model: &MixadModel, bundle: &DatasetBundle, cfg: &RunConfig, adjacency: bool) -> Result<()> {
    let scored = pipeline::score_bundle(model, bundle, cfg.score_batch)?;
    pipeline::write_scored(run, &bundle.names, model.config.window, &scored)?;
    if adjacency {
        write_atomic(
            &run.join(pipeline::ADJACENCY),
            pipeline::adjacency_csv(&bundle.names, model)?.as_bytes(),
        )?;
    }
    log::info!(
        "threshold {:.6}, best point-adjusted F1 {:.4}",
        scored.threshold.cut,
        scored.threshold.metrics.f1
    );
    Ok(())
}

fn interpret_into(run: &Path) -> Result<()> {
    let segments = pipeline::segments_from_files(run)?;
    log::info!("{} flagged segments", segments.len());
    pipeline::write_json(&run.join(SEGMENTS), &segments)
}

fn evaluate_into(run: &Path, bundle: &DatasetBundle) -> Result<()> {
    let report = pipeline::report_from_files(run, bundle)?;
    log::info!(
        "precision {:.4} recall {:.4} F1 {:.4} HitRate@100% {:.4} HitRate@150% {:.4}",
        report.precision,
        report.recall,
        report.f1,
        report.hitrate100,
        report.hitrate150
    );
    pipeline::write_json(&run.join(REPORT), &report)
}

pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let out = out_dir(cli)?;
    match &cli.command {
        Command::Synth => generate_synthetic(&cfg.synth)?.bundle.write(out),
        Command::Train { data } => train_into(out, &DatasetBundle::load(data)?, &cfg).map(drop),
        Command::Score { data, adjacency } => {
            let model = MixadModel::load(&out.join(CHECKPOINT))?;
            score_into(out, &model, &DatasetBundle::load(data)?, &cfg, *adjacency)
        }
        Command::Interpret => interpret_into(out),
        Command::Evaluate { data } => evaluate_into(out, &DatasetBundle::load(data)?),
        Command::RunAll { adjacency } => {
            let bundle = generate_synthetic(&cfg.synth)?.bundle;
            bundle.write(&out.join("data"))?;
            let model = train_into(out, &bundle, &cfg)?;
            score_into(out, &model, &bundle, &cfg, *adjacency)?;
            interpret_into(out)?;
            evaluate_into(out, &bundle)
        }
    }
}

/// Parses `argv`, runs the command and returns the process exit code:
/// 0 on success, 1 for invalid input, 2 for numeric failure.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            if e.is_numeric() {
                2
            } else {
                1
            }
        }
    }
}

pub fn init_logging() {
    let env = env_logger::Env::new().filter_or("MIXAD_LOG", "info");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}
