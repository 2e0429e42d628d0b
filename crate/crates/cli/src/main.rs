use clap::{Parser, Subcommand};
use maps_cli::commands;
use maps_core::envs::SuiteKind;
use maps_core::eval::{Method, SelectorTerm};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "maps",
    about = "Modular adaptive policy selection: train and evaluate gated multi-task policies \
             on synthetic point-mass benchmarks",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate scripted-expert demonstrations into a binary demo file
    GenData {
        /// Benchmark suite: scaled-dynamics, morphology, or sub-behavior
        #[arg(long)]
        suite: SuiteKind,
        /// Demonstrations per task
        #[arg(long)]
        per_task: usize,
        #[arg(long)]
        seed: u64,
        /// Override the exploration noise added to executed expert actions
        #[arg(long)]
        noise: Option<f64>,
        /// Output demo file
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a policy on a demo file
    Train {
        /// TOML training configuration
        #[arg(long)]
        config: PathBuf,
        /// Input demo file
        #[arg(long)]
        data: PathBuf,
        /// maps, single, mt, or mtmh
        #[arg(long)]
        method: Method,
        /// Output checkpoint (single produces one file per task)
        #[arg(long)]
        out: PathBuf,
        /// Training-history CSV path (default: checkpoint path with .history.csv)
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Closed-loop evaluation of trained checkpoints on a suite
    Eval {
        #[arg(long)]
        suite: SuiteKind,
        /// Checkpoint file; repeat once per task for single-task sets
        #[arg(long, required = true)]
        ckpt: Vec<PathBuf>,
        /// Held-out start states per task
        #[arg(long, default_value_t = 100)]
        starts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output success CSV
        #[arg(long)]
        out: PathBuf,
    },
    /// Module-usage report (CSV + grouped-bar SVG) of a maps checkpoint
    Usage {
        #[arg(long)]
        ckpt: PathBuf,
        /// Demo file whose states the gates are measured on
        #[arg(long)]
        data: PathBuf,
        /// Output CSV (the SVG lands next to it unless --svg is given)
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Retrain with one selector regulariser zeroed and report the effect
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// share, explore, sparse, or smooth
        #[arg(long)]
        term: SelectorTerm,
        #[arg(long)]
        suite: SuiteKind,
        #[arg(long, default_value_t = 100)]
        starts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate every method over suites × demo budgets × seeds
    Compare {
        #[arg(long)]
        config: PathBuf,
        /// Repeatable
        #[arg(long, required = true)]
        suite: Vec<SuiteKind>,
        /// Demo budgets per task; repeatable
        #[arg(long, required = true)]
        per_task: Vec<usize>,
        /// Training seeds; repeatable
        #[arg(long, required = true)]
        seed: Vec<u64>,
        #[arg(long, default_value_t = 100)]
        starts: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData {
            suite,
            per_task,
            seed,
            noise,
            out,
        } => commands::gen_data(suite, per_task, seed, noise, &out),
        Command::Train {
            config,
            data,
            method,
            out,
            history,
        } => commands::train(&config, &data, method, &out, history.as_deref()),
        Command::Eval {
            suite,
            ckpt,
            starts,
            seed,
            out,
        } => commands::eval(&ckpt, suite, starts, seed, &out),
        Command::Usage {
            ckpt,
            data,
            out,
            svg,
        } => commands::usage(&ckpt, &data, &out, svg.as_deref()),
        Command::Ablate {
            config,
            data,
            term,
            suite,
            starts,
            seed,
            out,
        } => commands::ablate(&config, &data, term, suite, starts, seed, &out),
        Command::Compare {
            config,
            suite,
            per_task,
            seed,
            starts,
            out,
        } => commands::compare(&config, &suite, &per_task, &seed, starts, &out),
    };
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::FAILURE
        }
    }
}
