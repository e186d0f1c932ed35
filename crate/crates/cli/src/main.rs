//! `dstpp`: simulate event data, train the diffusion model, sample,
//! evaluate and trace co-attention. Every command writes its resolved
//! config to the output directory and is a pure function of config, seed
//! and input files.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{evaluate, reproduce, sample, simulate, trace, train};
use config::UsageError;

#[derive(Parser, Debug)]
#[command(name = "dstpp", version, about = "Diffusion spatio-temporal point processes")]
struct Cli {
    /// JSON config for the command; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory [default: $DSTPP_OUT_ROOT/<command> or runs/<command>]
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a dataset.
    Simulate(simulate::SimulateArgs),
    /// Train on a dataset and write a checkpoint.
    Train(train::TrainArgs),
    /// Draw next events and denoising snapshots.
    Sample(sample::SampleArgs),
    /// Likelihood bound and prediction metrics on a split.
    Evaluate(evaluate::EvaluateArgs),
    /// Co-attention weights per denoising step.
    Trace(trace::TraceArgs),
    /// Simulate, train, evaluate, trace and sample on Synthetic-Independent data.
    ReproduceSynthetic(reproduce::ReproduceArgs),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = cli.config.as_deref();
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Simulate(a) => {
            let r = simulate::resolve(cfg, cli.seed, a)?;
            simulate::run(&r, &config::out_dir(out, "simulate"))?;
        }
        Command::Train(a) => {
            let r = train::resolve(cfg, cli.seed, a)?;
            train::run(&r, &config::out_dir(out, "train"))?;
        }
        Command::Sample(a) => {
            let r = sample::resolve(cfg, cli.seed, a)?;
            sample::run(&r, &config::out_dir(out, "sample"))?;
        }
        Command::Evaluate(a) => {
            let r = evaluate::resolve(cfg, cli.seed, a)?;
            evaluate::run(&r, &config::out_dir(out, "evaluate"))?;
        }
        Command::Trace(a) => {
            if cli.seed.is_some() {
                eprintln!("note: trace is deterministic; --seed has no effect");
            }
            let r = trace::resolve(cfg, a)?;
            trace::run(&r, &config::out_dir(out, "trace"))?;
        }
        Command::ReproduceSynthetic(a) => {
            let r = reproduce::resolve(cfg, cli.seed, a)?;
            reproduce::run(&r, &config::out_dir(out, "reproduce-synthetic"))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
