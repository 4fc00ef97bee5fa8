//! `onsetnet`: synthetic data, training, evaluation and diagnostics for the
//! visual onset detector.

mod commands;
mod error;
mod run_manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use onsetnet::config::RunConfig;

use error::{exit, CliError, CliResult};

const EXIT_CODES_HELP: &str = "Exit codes:
  0  success
  2  configuration or usage error
  3  data error (manifest, annotations, frames)
  4  numeric failure (non-finite loss, gradient or weight)
  5  I/O error
  6  checkpoint error (bad magic, version mismatch, CRC)
  7  gradient check above tolerance

Environment:
  ONSETNET_THREADS  caps the number of worker threads";

#[derive(Debug, Parser)]
#[command(name = "onsetnet", version, about = "Visual note onset detection with a multi-stream 3D CNN")]
pub struct Cli {
    /// `key = value` config file applied over the defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Root seed (overrides `seed`).
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Dataset manifest, or a directory containing manifest.json.
    #[arg(long, global = true, value_name = "PATH")]
    data: Option<PathBuf>,
    /// Output directory (overrides `out`).
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with visible onset cues into --out.
    Synth,
    /// Train one leave-one-subject-out split.
    Train {
        #[arg(long)]
        split: Option<usize>,
        #[arg(long)]
        max_epochs: Option<usize>,
    },
    /// Evaluate a checkpoint (or a prediction CSV) on one subject.
    Eval {
        /// Defaults to <out>/best.ckpt.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
        /// Defaults to the test subject of the configured split.
        #[arg(long)]
        subject: Option<String>,
        #[arg(long)]
        split: Option<usize>,
        /// Append the published reference rows to the report.
        #[arg(long)]
        reference: bool,
        /// Matching tolerance in seconds.
        #[arg(long)]
        tolerance: Option<f64>,
        /// Score this prediction CSV instead of running a model.
        #[arg(long, value_name = "PATH")]
        predictions: Option<PathBuf>,
        /// Average per-video scores instead of summing counts.
        #[arg(long)]
        macro_average: bool,
    },
    /// Informed random baseline on one subject's ground truth.
    Baseline {
        #[arg(long)]
        subject: Option<String>,
        #[arg(long)]
        split: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Finite-difference gradient checks of every op and the model loss.
    Gradcheck {
        /// ops, model or all.
        #[arg(long, default_value = "all")]
        scope: String,
        /// Corrupt the backward pass of the named op.
        #[arg(long, hide = true, value_name = "OP")]
        inject_fault: Option<String>,
    },
    /// Print the nine leave-one-subject-out plans.
    Splits,
}

impl Cli {
    /// Config overrides in precedence order: `--set`, then dedicated flags,
    /// then command flags.
    fn overrides(&self) -> CliResult<Vec<(String, String)>> {
        let mut out = Vec::new();
        for s in &self.set {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got {s:?}")))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        if let Some(s) = self.seed {
            out.push(("seed".into(), s.to_string()));
        }
        if let Some(d) = &self.data {
            let path = if d.is_dir() { d.join("manifest.json") } else { d.clone() };
            out.push(("data.manifest".into(), path.display().to_string()));
        }
        if let Some(o) = &self.out {
            out.push(("out".into(), o.display().to_string()));
        }
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        match &self.command {
            Command::Train { split, max_epochs } => {
                push("train.split", split.map(|s| s.to_string()));
                push("train.max_epochs", max_epochs.map(|s| s.to_string()));
            }
            Command::Eval {
                split,
                tolerance,
                macro_average,
                ..
            } => {
                push("train.split", split.map(|s| s.to_string()));
                push("eval.tolerance", tolerance.map(|s| s.to_string()));
                push("eval.averaging", macro_average.then(|| "macro".to_string()));
            }
            Command::Baseline { split, trials, .. } => {
                push("train.split", split.map(|s| s.to_string()));
                push("eval.baseline_trials", trials.map(|s| s.to_string()));
            }
            _ => {}
        }
        Ok(out)
    }
}

fn configure_threads() -> CliResult<()> {
    if let Ok(v) = std::env::var("ONSETNET_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Config(format!("ONSETNET_THREADS must be a positive integer, got {v:?}")))?;
        onsetnet::parallel::configure_threads(n);
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    let cfg = RunConfig::resolve(cli.config.as_deref(), &cli.overrides()?)?;
    let argv: Vec<String> = std::env::args().collect();
    match cli.command {
        Command::Synth => commands::synth(&cfg, argv),
        Command::Train { .. } => commands::train(&cfg, argv),
        Command::Eval {
            checkpoint,
            subject,
            reference,
            predictions,
            ..
        } => commands::eval(&cfg, argv, checkpoint, subject, reference, predictions),
        Command::Baseline { subject, .. } => commands::baseline(&cfg, argv, subject),
        Command::Gradcheck { scope, inject_fault } => commands::gradcheck(&cfg, &scope, inject_fault.as_deref()),
        Command::Splits => commands::splits(&cfg),
    }
}

fn main() -> ExitCode {
    let help = format!("{}\n{EXIT_CODES_HELP}", RunConfig::help_text());
    let matches = Cli::command().after_long_help(help.clone()).after_help(help).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
