use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod chart;
mod commands;
mod output;

/// Counterfactual explanations as commitments: data generation, training,
/// explanation, simulation and reporting.
#[derive(Parser)]
#[command(name = "cfcommit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a labeled dataset from a ground-truth scorer.
    GenData(GenDataArgs),
    /// Train a scoring model, optionally augmented with ledger scenarios.
    Train(TrainArgs),
    /// Generate a counterfactual explanation for one subject.
    Explain(ExplainArgs),
    /// Run one simulation.
    Simulate(SimulateArgs),
    /// Run paired simulations with augmentation on and off.
    Compare(CompareArgs),
    /// Render SVG charts from a metrics CSV.
    Report(ReportArgs),
}

#[derive(Args)]
pub struct GenDataArgs {
    /// Feature schema JSON; defaults to the reference schema.
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Ledger event log whose open scenarios join the training data.
    #[arg(long)]
    pub augment: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Row index of the subject in the data file.
    #[arg(long)]
    pub subject: u64,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Target outcome, 0 or 1.
    #[arg(long)]
    pub target: Option<u8>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Simulation config TOML; defaults to the reference scenario.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub augmentation: Option<bool>,
}

#[derive(Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated seeds or a half-open range `a..b`.
    #[arg(long)]
    pub seeds: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub metrics: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Explain(a) => commands::explain(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Compare(a) => commands::compare(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
