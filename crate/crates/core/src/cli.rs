//! Command-line front end. Exit codes: 0 success, 1 failed check or
//! aborted run, 2 usage error.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::error::Error;
use crate::gradcheck::run_gradcheck;
use crate::oracle::{rows_to_csv, sweep};
use crate::trainer::{run_training_in, TrainConfig, Trainer, OUTPUT_DIR_ENV};

#[derive(Debug, Parser)]
#[command(name = "iae-lab", version, about = "Implicit autoencoder laboratory")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model from a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Evaluate a checkpoint directory and print the summary as JSON.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Check every tabular identity on random finite instances.
    OracleCheck {
        #[arg(long)]
        trials: u64,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 1e-9)]
        tolerance: f64,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Finite-difference check of every autodiff op.
    Gradcheck {
        #[arg(long)]
        seed: u64,
    },
}

fn default_dir(seed: u64) -> PathBuf {
    let root = std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
    let ts = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs());
    root.join(format!("{ts}-{seed}"))
}

fn load_config(path: &Path, err: &mut dyn Write) -> Result<TrainConfig, i32> {
    if !path.is_file() {
        let _ = writeln!(err, "error: config file not found: {}", path.display());
        return Err(2);
    }
    TrainConfig::load(path).map_err(|e| {
        let _ = writeln!(err, "error: invalid config {}: {e}", path.display());
        2
    })
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return 0;
            }
            let msg = e.to_string();
            let line: Vec<&str> = msg.lines().map(str::trim).take_while(|l| !l.starts_with("Usage:")).filter(|l| !l.is_empty()).collect();
            let _ = writeln!(err, "{}", line.join(" "));
            return 2;
        }
    };
    match cli.command {
        Command::Train { config, output_dir } => {
            let mut cfg = match load_config(&config, err) {
                Ok(c) => c,
                Err(code) => return code,
            };
            if output_dir.is_some() {
                cfg.output_dir = output_dir;
            }
            let dir = cfg.resolve_output_dir();
            match run_training_in(&cfg, &dir) {
                Ok(a) => {
                    let _ = writeln!(out, "run complete: {}", a.output_dir.display());
                    0
                }
                Err(e @ Error::Config(_)) => {
                    let _ = writeln!(err, "error: {e}");
                    2
                }
                Err(e) => {
                    let _ = writeln!(err, "error: run aborted: {e}");
                    1
                }
            }
        }
        Command::Eval { checkpoint, config } => {
            let cfg = match load_config(&config, err) {
                Ok(c) => c,
                Err(code) => return code,
            };
            if !checkpoint.is_dir() {
                let _ = writeln!(err, "error: checkpoint directory not found: {}", checkpoint.display());
                return 2;
            }
            let summary = Trainer::from_checkpoint(cfg, &checkpoint).and_then(|t| t.evaluate(None));
            match summary.and_then(|s| Ok(serde_json::to_string_pretty(&s)?)) {
                Ok(json) => {
                    let _ = writeln!(out, "{json}");
                    0
                }
                Err(e) => {
                    let _ = writeln!(err, "error: evaluation failed: {e}");
                    1
                }
            }
        }
        Command::OracleCheck { trials, seed, tolerance, output_dir } => {
            if !(tolerance > 0.0) {
                let _ = writeln!(err, "error: --tolerance must be positive");
                return 2;
            }
            let rows = match sweep(trials, seed, tolerance) {
                Ok(r) => r,
                Err(e) => {
                    let _ = writeln!(err, "error: oracle sweep failed: {e}");
                    return 1;
                }
            };
            let dir = output_dir.unwrap_or_else(|| default_dir(seed));
            let path = dir.join("oracle_check.csv");
            if let Err(e) = std::fs::create_dir_all(&dir).and_then(|_| std::fs::write(&path, rows_to_csv(&rows))) {
                let _ = writeln!(err, "error: cannot write {}: {e}", path.display());
                return 1;
            }
            let failed = rows.iter().filter(|r| !r.pass).count();
            let worst = rows.iter().map(|r| r.residual).fold(0.0, f64::max);
            let _ = writeln!(out, "{} checks on {trials} instances, {failed} failed, max residual {worst:e}; report: {}", rows.len(), path.display());
            i32::from(failed > 0)
        }
        Command::Gradcheck { seed } => match run_gradcheck(seed) {
            Ok(rows) => {
                for r in &rows {
                    let _ = writeln!(out, "{},{},{:e},{}", r.name, r.leaf, r.error, if r.pass() { "pass" } else { "FAIL" });
                }
                i32::from(!rows.iter().all(|r| r.pass()))
            }
            Err(e) => {
                let _ = writeln!(err, "error: gradcheck failed: {e}");
                1
            }
        },
    }
}
