//! `affect-risk` command-line driver.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Overrides, RunConfig};

#[derive(Debug)]
pub enum CliError {
    /// Bad usage, configuration or input path: exit 2.
    Config(String),
    /// A check the command performs did not pass: exit 1.
    CheckFailed(String),
    Other(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Other(e)
    }
}

#[derive(Parser, Debug)]
#[command(name = "affect-risk", version, about = "Affect features, boosted-tree risk models and the toy PIAM demo")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// RunConfig JSON file; omitted sections take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Input corpus (line-delimited JSON).
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    /// Allow `features.asl_override` to replace the built-in emotion mapping.
    #[arg(long, global = true)]
    unsafe_asl_override: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a planted synthetic corpus and its truth sidecar.
    Synth {
        #[arg(long)]
        n_calls: Option<usize>,
    },
    /// Parse and validate a corpus.
    IngestCheck,
    /// Build the feature matrix.
    Features,
    /// Fit one ensemble on the training split and score the test split.
    Train,
    /// Modality ablation table.
    Ablate {
        /// Horizons in days (1, 7, 30); repeatable.
        #[arg(long = "horizon")]
        horizons: Vec<u32>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Bootstrap gain-importance ranking.
    Importance {
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Acoustic / text label agreement.
    Concordance,
    /// Paired λ = 0 / λ > 0 toy training runs.
    PiamDemo {
        #[arg(long)]
        seeds: Option<usize>,
        /// Only run the finite-difference gradient checks.
        #[arg(long)]
        gradcheck: bool,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut o = Overrides {
        seed: cli.seed,
        out: cli.out.clone(),
        corpus: cli.corpus.clone(),
        ..Default::default()
    };
    match &cli.command {
        Command::Synth { n_calls } => o.n_calls = *n_calls,
        Command::Ablate { horizons, iterations } => {
            if !horizons.is_empty() {
                o.horizons = Some(horizons.clone());
            }
            o.iterations = *iterations;
        }
        Command::Importance { iterations, top_k } => {
            o.iterations = *iterations;
            o.top_k = *top_k;
        }
        Command::PiamDemo { seeds, .. } => o.seeds = *seeds,
        _ => {}
    }
    let cfg = RunConfig::load(cli.config.as_deref())?.resolve(&o)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::Other(e.into()))?;
    let ctx = commands::Ctx {
        cfg,
        allow_unsafe_asl: cli.unsafe_asl_override,
    };
    pool.install(|| match cli.command {
        Command::Synth { .. } => commands::synth(&ctx),
        Command::IngestCheck => commands::ingest_check(&ctx),
        Command::Features => commands::features(&ctx),
        Command::Train => commands::train(&ctx),
        Command::Ablate { .. } => commands::ablate(&ctx),
        Command::Importance { .. } => commands::importance(&ctx),
        Command::Concordance => commands::concordance(&ctx),
        Command::PiamDemo { gradcheck, .. } => {
            if gradcheck {
                commands::gradcheck(&ctx)
            } else {
                commands::piam_demo(&ctx)
            }
        }
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::CheckFailed(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
