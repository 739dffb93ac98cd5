//! `mnar`: command-line workbench for debiased MNAR estimation.
//!
//! Usage: `mnar <subcommand> --config <path> [--seed <u64>] [--out <dir>]
//! [--threads <n>]`. The MNAR_OUT and MNAR_THREADS environment variables
//! override only the output path and thread count, below the flags in
//! precedence. Exit codes: 0 success, 1 domain error, 2 IO error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mnar_core::cli::artifacts::error_json;
use mnar_core::cli::commands::{override_seed, run_subcommand};

#[derive(Parser)]
#[command(
    name = "mnar",
    version,
    about = "Debiased estimation workbench for MNAR prediction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Path to the subcommand's JSON config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the config's seed (where the subcommand has one).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Rayon thread count (0 = library default).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic MNAR dataset.
    Generate,
    /// Evaluate one estimator on a dataset realization.
    Estimate,
    /// Closed-form bias/variance/bounds, optionally vs Monte Carlo.
    Analyze,
    /// Closed-form optimal exponents over a propensity grid (CSV).
    Alpha,
    /// Monte Carlo verification of an estimator against its closed forms.
    #[command(name = "mc-verify")]
    McVerify,
    /// Train a matrix-factorization model with an estimator loss.
    Train,
    /// Score a checkpoint on a dataset's MAR test split.
    Evaluate,
    /// Shaping-function × weight-ratio training sweep (CSV).
    Sweep,
    /// Emit the bias/variance factor surfaces and optimal values (CSV).
    Report,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Estimate => "estimate",
            Command::Analyze => "analyze",
            Command::Alpha => "alpha",
            Command::McVerify => "mc-verify",
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::Sweep => "sweep",
            Command::Report => "report",
        }
    }
}

fn run(cli: Cli) -> mnar_core::Result<()> {
    let name = cli.command.name();

    let threads = cli.threads.or_else(|| {
        std::env::var("MNAR_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        if n > 0 {
            // ignore the error if a pool already exists (tests, repeat calls)
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
    }

    let out_dir = cli
        .out
        .or_else(|| std::env::var("MNAR_OUT").ok().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));

    let config_path = cli.config.ok_or_else(|| {
        mnar_core::Error::InvalidConfig("--config <path> is required".to_string())
    })?;
    let text = std::fs::read_to_string(&config_path)?;
    let mut config: serde_json::Value = serde_json::from_str(&text)?;
    if let Some(seed) = cli.seed {
        override_seed(name, &mut config, seed);
    }

    let summary = run_subcommand(name, config, &out_dir)?;
    println!(
        "{}",
        serde_json::json!({
            "status": "ok",
            "command": name,
            "artifacts": summary.artifacts,
        })
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            println!("{}", error_json(&err));
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
