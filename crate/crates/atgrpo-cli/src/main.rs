//! `atgrpo` — pipeline driver for the adaptive tool-use training harness.
//!
//! Subcommands: gen-tasks, annotate, sft, train, eval, report.
//! Exit codes: 2 invalid config, 3 malformed record, 4 missing file,
//! 5 checkpoint schema mismatch, 1 other errors.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use atgrpo_cli::config::{self, RunConfig};
use atgrpo_cli::error::{CliError, Result};
use atgrpo_cli::pipeline;

#[derive(Parser)]
#[command(name = "atgrpo", version, about = "Adaptive tool-use RL training harness")]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Primary output path of the subcommand.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured task mix into --out (line-delimited records).
    GenTasks,
    /// Annotate a task file with Tool Benefit Scores into --out.
    Annotate {
        #[arg(long)]
        tasks: PathBuf,
    },
    /// Fit the cold-start policy on scripted demonstrations into --out.
    Sft {
        #[arg(long)]
        tasks: PathBuf,
    },
    /// Train from an initial checkpoint over annotated tasks into --out.
    Train {
        #[arg(long)]
        tasks: PathBuf,
        /// Initial (reference) checkpoint, typically the SFT output.
        #[arg(long)]
        init: PathBuf,
        /// Metrics CSV destination.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Greedy evaluation of a checkpoint; prints the summary.
    Eval {
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Final-eval summary table plus ΔS histogram; prints to stdout.
    Report {
        #[arg(long)]
        tasks: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn required_out(out: &Option<PathBuf>) -> Result<&PathBuf> {
    out.as_ref()
        .ok_or_else(|| CliError::Config("--out is required for this command".into()))
}

fn run(cli: &Cli) -> Result<()> {
    let mut cfg: RunConfig = config::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match &cli.command {
        Command::GenTasks => {
            let n = pipeline::cmd_gen_tasks(&cfg, required_out(&cli.out)?)?;
            println!("wrote {n} tasks");
        }
        Command::Annotate { tasks } => {
            let hist = pipeline::cmd_annotate(&cfg, tasks, required_out(&cli.out)?)?;
            println!("annotated {} tasks", hist.total());
            print!("{}", pipeline::render_histogram(&hist));
        }
        Command::Sft { tasks } => {
            let (n, redundant) = pipeline::cmd_sft(&cfg, tasks, required_out(&cli.out)?)?;
            println!("fit on {n} demonstrations ({redundant} with redundant tool calls)");
        }
        Command::Train { tasks, init, metrics } => {
            let history = pipeline::cmd_train(
                &cfg,
                tasks,
                init,
                required_out(&cli.out)?,
                metrics.as_deref(),
            )?;
            println!("trained for {} iterations", history.len());
            if let Some(last) = history.last() {
                println!(
                    "final iteration: reward {:.4}, accuracy {:.4}, tool calls {:.4}",
                    last.mean_total_reward, last.mean_accuracy, last.mean_tool_calls
                );
            }
        }
        Command::Eval { tasks, checkpoint } => {
            let report = pipeline::cmd_eval(&cfg, tasks, checkpoint)?;
            print!("{}", pipeline::render_eval(&report));
        }
        Command::Report { tasks, checkpoint } => {
            print!("{}", pipeline::cmd_report(&cfg, tasks, checkpoint)?);
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(&cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
