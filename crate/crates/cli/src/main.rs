//! Command-line entry point for the project network forecasting toolkit.

mod commands;
mod data;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or invalid inputs: exit code 2.
    Usage(String),
    /// Failures during execution: exit code 1.
    Runtime(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }
}

#[derive(Parser)]
#[command(
    name = "pnf",
    version,
    about = "Project network forecasting: generate, ingest, train, evaluate, and run experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Parallelism across instances/seeds (never within a training run).
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic project instances as canonical JSON.
    Generate {
        /// Activities per instance.
        #[arg(long)]
        size: usize,
        /// Edge probability per forward node pair.
        #[arg(long)]
        density: f64,
        /// Number of instances.
        #[arg(long, default_value_t = 1)]
        samples: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse a PSPLIB single-mode .sm file into canonical JSON.
    ParsePsplib {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Reject instances with fewer activities.
        #[arg(long, default_value_t = 10)]
        min_activities: usize,
        /// Reject instances with more activities.
        #[arg(long, default_value_t = 150)]
        max_activities: usize,
    },
    /// Build surrogate project graphs from a tabular CSV.
    IngestCsv {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_parser = ["chain4", "phase6", "module"])]
        strategy: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a directory of canonical JSON instances.
    Train {
        #[arg(long, value_parser = ["graphsage", "tgn", "mlp", "ridge"])]
        model: String,
        #[arg(long)]
        data: PathBuf,
        /// JSON file with optional "model", "train" and "split" sections.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 13)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a dataset; writes a metrics CSV.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Active measurement allocation experiment; writes a learning curve CSV.
    Active {
        #[arg(long, value_parser = ["random", "uncertainty", "topology", "hybrid"])]
        strategy: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rolling-execution experiment; writes a completion-curve CSV.
    Temporal {
        #[arg(long, value_parser = ["static-mlp", "static-gnn", "adaptive"])]
        variant: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve the crash-cost frontier for one instance under a makespan cap.
    Frontier {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        tmax: f64,
        /// Optional JSON map of activity id to crash parameters.
        #[arg(long)]
        crash: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo rollout of one instance; writes a summary JSON.
    Mc {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 13)]
        seed: u64,
        /// Log-space efficiency variance of the log-normal family.
        #[arg(long, default_value_t = 0.04)]
        sigma2: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.jobs > 1 {
        // Parallelism only ever spans instances/seeds; training stays
        // single-threaded for reproducibility.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global();
    }
    let result = match cli.command {
        Command::Generate {
            size,
            density,
            samples,
            seed,
            out,
        } => commands::generate(size, density, samples, seed, &out),
        Command::ParsePsplib {
            input,
            out,
            min_activities,
            max_activities,
        } => commands::parse_psplib(&input, &out, min_activities, max_activities),
        Command::IngestCsv {
            input,
            strategy,
            out,
        } => commands::ingest_csv(&input, &strategy, &out),
        Command::Train {
            model,
            data,
            config,
            seed,
            out,
        } => commands::train(&model, &data, config.as_deref(), seed, &out),
        Command::Eval {
            checkpoint,
            data,
            out,
        } => commands::eval(&checkpoint, &data, &out),
        Command::Active {
            strategy,
            data,
            config,
            out,
        } => commands::active(&strategy, &data, config.as_deref(), &out),
        Command::Temporal {
            variant,
            data,
            config,
            out,
        } => commands::temporal(&variant, &data, config.as_deref(), &out),
        Command::Frontier {
            data,
            tmax,
            crash,
            out,
        } => commands::frontier(&data, tmax, crash.as_deref(), &out),
        Command::Mc {
            data,
            samples,
            seed,
            sigma2,
            out,
        } => commands::monte_carlo(&data, samples, seed, sigma2, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
