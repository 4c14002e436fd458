//! `salnet`: saliency evaluation, piecewise training, prediction and
//! benchmark-style reporting.

mod eval;
mod failure;
mod predict;
mod record;
mod report;
mod settings;
mod synth;
mod train;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::failure::{CliError, CliResult};
use crate::settings::{parse_pair, Settings};

#[derive(Parser)]
#[command(
    name = "salnet",
    version,
    about = "Saliency metrics, training and prediction"
)]
struct Cli {
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Print per-item progress to standard error.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score predicted maps against ground truth.
    Eval(eval::EvalArgs),
    /// Train one encoder (backbone plus read-out head).
    TrainEncoder(train::EncoderArgs),
    /// Train the multi-level decoder on frozen encoders.
    TrainDecoder(train::DecoderArgs),
    /// Write saliency maps for a directory of images.
    Predict(predict::PredictArgs),
    /// Generate a synthetic dataset.
    Synth(synth::SynthArgs),
    /// Render metric reports as a comparison table.
    Report(report::ReportArgs),
}

/// Flags shared by every subcommand.
#[derive(Args, Debug)]
pub struct Common {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,

    /// Key/value settings file.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Override one setting as key=value; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_pair)]
    pub set: Vec<(String, String)>,

    /// Random seed.
    #[arg(long)]
    pub seed: Option<String>,
}

impl Common {
    /// Resolves settings; `flags` apply after `--set`, in the given order.
    pub fn settings(
        &self,
        defaults: &[(&str, &str)],
        flags: &[(&str, Option<String>)],
    ) -> CliResult<Settings> {
        let mut overrides = self.set.clone();
        if let Some(seed) = &self.seed {
            overrides.push(("seed".into(), seed.clone()));
        }
        for (key, value) in flags {
            if let Some(v) = value {
                overrides.push((key.to_string(), v.clone()));
            }
        }
        Settings::resolve(defaults, self.config.as_deref(), &overrides)
    }

    pub fn create_out(&self) -> CliResult<&Path> {
        fs::create_dir_all(&self.out).map_err(|e| CliError::io(&self.out, e))?;
        Ok(&self.out)
    }
}

pub struct Context {
    pub verbose: bool,
}

fn run(cli: Cli) -> CliResult<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| CliError::input(format!("thread pool: {e}")))?;
    }
    let ctx = Context {
        verbose: cli.verbose,
    };
    match cli.command {
        Command::Eval(a) => eval::run(&a, &ctx),
        Command::TrainEncoder(a) => train::run_encoder(&a, &ctx),
        Command::TrainDecoder(a) => train::run_decoder(&a, &ctx),
        Command::Predict(a) => predict::run(&a, &ctx),
        Command::Synth(a) => synth::run(&a, &ctx),
        Command::Report(a) => report::run(&a, &ctx),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
