use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use transboost_core::eval::Method;
use transboost_lab::commands::{self, Overrides, Resolved};

#[derive(Parser)]
#[command(name = "transboost", version, about = "Transductive fine-tuning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Seed for the split, pretraining and fine-tuning.
    #[arg(long)]
    seed: Option<u64>,
    /// Weight of the transductive (or entropy) term.
    #[arg(long)]
    lambda: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<Resolved> {
        let overrides = Overrides { seed: self.seed, lambda: self.lambda, out: self.out.clone() };
        Resolved::from_file(&self.config, &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the inductive model on the labeled split.
    Pretrain(#[command(flatten)] Common),
    /// Fine-tune a pretrained checkpoint with the transductive loss.
    Transboost {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Fine-tune a pretrained checkpoint with entropy minimization.
    Entmin {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Run the train-fraction × test-fraction grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Grid cells run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Compare the three loss variants on shared seeds.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pretrain(c) => {
            commands::cmd_pretrain(&c.resolve()?)?;
        }
        Command::Transboost { common, checkpoint } => {
            commands::cmd_finetune(&common.resolve()?, &checkpoint, Method::TransBoost)?;
        }
        Command::Entmin { common, checkpoint } => {
            commands::cmd_finetune(&common.resolve()?, &checkpoint, Method::EntMin)?;
        }
        Command::Sweep { common, jobs } => {
            commands::cmd_sweep(&common.resolve()?, jobs)?;
        }
        Command::Ablate { common, jobs } => {
            commands::cmd_ablate(&common.resolve()?, jobs)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TRANSBOOST_LOG", "info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
