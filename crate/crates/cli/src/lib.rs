//! The `upseg` command line: train, evaluate, profile and sweep models
//! described by a flat `section.key = value` config file.

pub mod commands;
pub mod config;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use commands::{CliError, CliResult, EvalSplit};
use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "upseg", version, about = "Segment low-resolution images against high-resolution labels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Directory for every file the command writes.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides optimizer.seed and model.seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train and write checkpoint.utsr and train_log.csv.
    Train(Common),
    /// Score a checkpoint at ground-truth resolution.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to eval.checkpoint, then <out>/checkpoint.utsr.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Which part of the data to score: train, val or all.
        #[arg(long, default_value = "val")]
        split: EvalSplit,
    },
    /// Per-layer parameters, MACs and activation memory.
    Profile(Common),
    /// Train baseline and extended variants over several input resolutions.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "16,32,64")]
        resolutions: Vec<usize>,
        /// Run sweep cells concurrently, up to UPSEG_THREADS at a time.
        #[arg(long)]
        parallel: bool,
    },
    /// Write the configured synthetic dataset to <out>/dataset.utsr.
    Generate(Common),
}

fn load(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::from_file(&common.config)?;
    commands::apply_seed(&mut cfg, common.seed);
    Ok(cfg)
}

/// Executes a parsed command line, writing human-readable output to `stdout`
/// and progress to `stderr`.
pub fn run(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CliResult<()> {
    match cli.command {
        Command::Train(common) => {
            let cfg = load(&common)?;
            let done = commands::cmd_train(&cfg, &common.out, stderr)?;
            let _ = writeln!(
                stdout,
                "best epoch {} (val jaccard {:.4}); wrote {} and {}",
                done.report.best_epoch,
                done.report.best_val_jaccard,
                done.checkpoint.display(),
                done.log.display()
            );
        }
        Command::Eval {
            common,
            checkpoint,
            split,
        } => {
            let cfg = load(&common)?;
            let ckpt = checkpoint
                .or_else(|| cfg.checkpoint.clone())
                .unwrap_or_else(|| common.out.join(commands::CHECKPOINT_FILE));
            let report = cfg
                .report_path
                .clone()
                .unwrap_or_else(|| common.out.join(commands::EVAL_FILE));
            let ev = commands::cmd_eval(&cfg, &ckpt, split, &report)?;
            let _ = writeln!(
                stdout,
                "{} images: macro dice {:.4} jaccard {:.4}; pooled dice {:.4} jaccard {:.4}; wrote {}",
                ev.images,
                ev.macro_mean_dice,
                ev.macro_mean_jaccard,
                ev.pooled.mean_dice,
                ev.pooled.mean_jaccard,
                report.display()
            );
        }
        Command::Profile(common) => {
            let cfg = load(&common)?;
            commands::cmd_profile(&cfg, &common.out, stdout)?;
        }
        Command::Sweep {
            common,
            resolutions,
            parallel,
        } => {
            let cfg = load(&common)?;
            let cap = commands::thread_cap(std::env::var("UPSEG_THREADS").ok().as_deref())?;
            let threads = if parallel { cap } else { 1 };
            let rows = commands::cmd_sweep(&cfg, &resolutions, threads, &common.out, stderr)?;
            let _ = write!(stdout, "{}", commands::sweep_csv(&rows));
        }
        Command::Generate(common) => {
            let cfg = load(&common)?;
            let path = commands::cmd_generate(&cfg, &common.out)?;
            let _ = writeln!(stdout, "wrote {}", path.display());
        }
    }
    Ok(())
}

/// Exit status for a finished run: 0 on success, otherwise the error's code.
pub fn exit_status(result: &Result<(), CliError>) -> u8 {
    match result {
        Ok(()) => 0,
        Err(e) => e.exit_code(),
    }
}
