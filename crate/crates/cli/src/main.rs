use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use srank_core::harness::{self, RunStatus};
use srank_core::optim::MSignTargets;

const EXIT_USAGE: u8 = 1;
const EXIT_DIVERGED: u8 = 2;
const EXIT_VIOLATION: u8 = 3;

#[derive(Parser)]
#[command(name = "srank-lab", version, about = "Stable-rank diagnostics and MSign experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a config file.
    Train {
        config: PathBuf,
        /// Output directory; defaults to the config's run.out_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every theorem validator sweep and print one JSON line per check.
    ValidateTheorems {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        trials: usize,
    },
    /// FLOPs overhead of periodic MSign relative to a training step.
    Overhead {
        #[arg(long)]
        b: u64,
        #[arg(long)]
        t: u64,
        #[arg(long)]
        d: u64,
        #[arg(long)]
        p: u64,
        #[arg(long, default_value = "attention_only")]
        targets: MSignTargets,
    },
    /// Fit T(P) = T_inf / (1 + r/P) to a `P,tokens_per_second` CSV.
    FitThroughput { csv: PathBuf },
    /// Spectral timeline over checkpoint directories.
    Diagnose {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Train { config, out } => {
            let outcome = harness::cmd_train(&config, out.as_deref())
                .with_context(|| format!("training from {}", config.display()))?;
            println!("{}", serde_json::to_string_pretty(&outcome.summary)?);
            Ok(match outcome.summary.status {
                RunStatus::Completed => 0,
                RunStatus::Diverged => EXIT_DIVERGED,
            })
        }
        Command::ValidateTheorems { seed, trials } => {
            let summaries = harness::cmd_validate_theorems(seed, trials)?;
            print!("{}", harness::report_text(&summaries));
            Ok(if summaries.iter().all(|s| s.passed()) { 0 } else { EXIT_VIOLATION })
        }
        Command::Overhead { b, t, d, p, targets } => {
            let report = harness::cmd_overhead(b, t, d, p, targets)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(0)
        }
        Command::FitThroughput { csv } => {
            let text = std::fs::read_to_string(&csv).with_context(|| format!("reading {}", csv.display()))?;
            let fit = harness::cmd_fit_throughput(&harness::parse_throughput_csv(&text)?)?;
            println!("{}", serde_json::to_string_pretty(&fit)?);
            Ok(0)
        }
        Command::Diagnose { dirs, out } => {
            let report = harness::cmd_diagnose(&dirs)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            match out {
                Some(path) => std::fs::write(&path, report.to_csv())?,
                None => print!("{}", report.to_csv()),
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}
