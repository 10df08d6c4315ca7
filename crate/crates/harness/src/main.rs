use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use neurode_harness::{evaluate, train, ExperimentConfig, HarnessError, MetricsReport, TrainOptions};

#[derive(Parser)]
#[command(name = "neurode", version, about = "Train and evaluate continuous-depth models on synthetic tasks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model described by a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for metrics.json, checkpoint.json and trajectory.jsonl.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write test-set trajectories.
        #[arg(long)]
        dump_trajectory: bool,
    },
    /// Report test-set metrics for a saved checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
}

fn summarize(r: &MetricsReport) {
    let Some(m) = &r.metrics else { return };
    let headline = match (m.accuracy, m.nll, m.mse) {
        (Some(a), _, _) => format!("accuracy {a:.4}"),
        (_, Some(n), _) => format!("nll {n:.4}"),
        (_, _, Some(e)) => format!("mse {e:.6}"),
        _ => String::new(),
    };
    eprintln!(
        "{:?}: {headline}, test loss {:.4}, {} steps, {} parameters, NFE fwd {} bwd {}, {:.1}s",
        r.task,
        m.test_loss,
        r.steps_completed,
        r.num_parameters,
        r.nfe_forward.last().copied().unwrap_or(0),
        r.nfe_backward.last().copied().unwrap_or(0),
        r.wall_time_s
    );
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train {
            config,
            out,
            seed,
            dump_trajectory,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let opts = TrainOptions {
                out_dir: Some(out.clone()),
                dump_trajectory,
            };
            let report = train(&cfg, &opts).with_context(|| format!("training {}", config.display()))?;
            summarize(&report);
            eprintln!("wrote {}", out.display());
        }
        Command::Evaluate { checkpoint, config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = evaluate(&checkpoint, &cfg).with_context(|| format!("evaluating {}", checkpoint.display()))?;
            summarize(&report);
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<HarnessError>().map_or(1, HarnessError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
