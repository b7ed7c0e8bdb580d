use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod config;

use commands::{
    AblateArgs, CompareArgs, EvalArgs, InferArgs, InspectArgs, PrefixArgs, StudyArgs, SynthArgs,
    TrainChainArgs, TrainPairArgs,
};

/// Reverse distillation over embedding-model hierarchies.
#[derive(Debug, Parser)]
#[command(name = "revdistill", version)]
struct Cli {
    /// TOML file with one `[<subcommand>]` table; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for dataset-level parallelism.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic embedding family and DMS datasets.
    Synth(SynthArgs),
    /// Train a map between two levels.
    TrainPair(TrainPairArgs),
    /// Train a chained map over a hierarchy.
    TrainChain(TrainChainArgs),
    /// Produce reverse-distilled embeddings.
    Infer(InferArgs),
    /// Cut rd embeddings down to a declared level width.
    Prefix(PrefixArgs),
    /// Score embeddings on DMS datasets.
    Eval(EvalArgs),
    /// Tabulate win rates and mean Spearman across eval reports.
    Compare(CompareArgs),
    /// Compare PCR and OLS mappings downstream.
    Ablate(AblateArgs),
    /// Print artifact metadata.
    Inspect(InspectArgs),
    /// Evaluate several chain configurations on the same datasets.
    Study(StudyArgs),
}

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Internal(String),
}

impl From<revdistill::Error> for CliError {
    fn from(e: revdistill::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Internal(e.to_string())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Validation("`jobs` must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    let cfg = cli.config.as_deref();
    match cli.command {
        Command::Synth(a) => commands::synth(&config::merge("synth", &a, cfg)?),
        Command::TrainPair(a) => commands::train_pair(&config::merge("train-pair", &a, cfg)?),
        Command::TrainChain(a) => commands::train_chain(&config::merge("train-chain", &a, cfg)?),
        Command::Infer(a) => commands::infer(&config::merge("infer", &a, cfg)?),
        Command::Prefix(a) => commands::prefix(&config::merge("prefix", &a, cfg)?),
        Command::Eval(a) => commands::eval(&config::merge("eval", &a, cfg)?),
        Command::Compare(a) => commands::compare(&config::merge("compare", &a, cfg)?),
        Command::Ablate(a) => commands::ablate(&config::merge("ablate", &a, cfg)?),
        Command::Inspect(a) => commands::inspect(&config::merge("inspect", &a, cfg)?),
        Command::Study(a) => commands::study(&config::merge("study", &a, cfg)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(1)
        }
    }
}
