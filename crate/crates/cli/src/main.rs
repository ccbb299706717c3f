//! `jcrc`: simulate, fit, predict, register and evaluate from the shell.
//!
//! Exit codes: 0 success, 2 usage, 3 invalid data, 4 numerical failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "jcrc", version, about = "Joint registration and classification of two-dimensional curves")]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a simulated dataset.
    Simulate(SimulateArgs),
    /// Fit registration and classifier on a labelled panel.
    Fit(FitArgs),
    /// Predict labels of new subjects.
    Predict(PredictArgs),
    /// Write the aligned training curves.
    Register(RegisterArgs),
    /// Score predictions or estimates against simulation truth.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    study: u8,
    /// Required for study 2, rejected for study 1.
    #[arg(long, value_enum)]
    scenario: Option<ScenarioArg>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Subjects (study 1 only; default 80).
    #[arg(long)]
    n_subjects: Option<usize>,
    /// Observations per curve (study 1 only; default 100).
    #[arg(long)]
    n_obs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    #[value(name = "A", alias = "a")]
    A,
    #[value(name = "B", alias = "b")]
    B,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Split {
    Train,
    Test,
    All,
}

/// Input panel plus an optional truth-file subset.
#[derive(Args)]
struct PanelArgs {
    #[arg(long)]
    curves: PathBuf,
    #[arg(long)]
    scalars: PathBuf,
    /// Simulation truth; with `--split`, restricts the panel to one half.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "all", requires = "truth")]
    split: Split,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    panel: PanelArgs,
    /// JSON run configuration; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fix `k_x` (with `--k-e`) instead of cross-validating.
    #[arg(long, requires = "k_e")]
    k_x: Option<usize>,
    #[arg(long, requires = "k_x")]
    k_e: Option<usize>,
    /// Record wall-clock stage timings in fit_report.json.
    #[arg(long)]
    report_timings: bool,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    panel: PanelArgs,
    /// Directory holding registration.json and classifier.json.
    #[arg(long)]
    model: PathBuf,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RegisterArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    curves: PathBuf,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "all", requires = "truth")]
    split: Split,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Classifier files of replicate fits; the truth's coefficients must be shared.
    #[arg(long)]
    classifier: Vec<PathBuf>,
    /// Registration file whose warps are compared with the truth's.
    #[arg(long)]
    registration: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
