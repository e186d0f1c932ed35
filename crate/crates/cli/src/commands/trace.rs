use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use dstpp::denoiser::{attention_trace, write_trace_csv};
use dstpp::{Model, Split};
use serde::{Deserialize, Serialize};

use super::sample::parse_split;
use crate::config::{self, require};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceRun {
    pub checkpoint: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub split: Split,
    /// Steps to trace; every step when absent.
    pub steps: Option<Vec<usize>>,
    pub max_sequences: Option<usize>,
}

impl Default for TraceRun {
    fn default() -> Self {
        Self {
            checkpoint: None,
            data: None,
            split: Split::Test,
            steps: None,
            max_sequences: None,
        }
    }
}

#[derive(Args, Debug)]
pub struct TraceArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_parser = parse_split)]
    pub split: Option<Split>,
    /// Comma-separated steps.
    #[arg(long, value_delimiter = ',')]
    pub steps: Option<Vec<usize>>,
    #[arg(long)]
    pub max_sequences: Option<usize>,
}

pub fn resolve(config: Option<&Path>, args: &TraceArgs) -> Result<TraceRun> {
    let mut r: TraceRun = config::load(config)?;
    if args.checkpoint.is_some() {
        r.checkpoint = args.checkpoint.clone();
    }
    if args.data.is_some() {
        r.data = args.data.clone();
    }
    if let Some(s) = args.split {
        r.split = s;
    }
    if args.steps.is_some() {
        r.steps = args.steps.clone();
    }
    if args.max_sequences.is_some() {
        r.max_sequences = args.max_sequences;
    }
    require(r.checkpoint.as_ref(), "--checkpoint")?;
    require(r.data.as_ref(), "--data")?;
    Ok(r)
}

pub fn trace_into(model: &Model, seqs: &[dstpp::EventSequence], steps: Option<&[usize]>, dir: &Path) -> Result<()> {
    let k = model.schedule.steps();
    let all: Vec<usize> = (1..=k).rev().collect();
    let steps = steps.unwrap_or(&all);
    if let Some(bad) = steps.iter().find(|&&s| s == 0 || s > k) {
        return Err(config::usage(format!("trace step {bad} outside 1..={k}")));
    }
    let rows = attention_trace(model, seqs, steps)?;
    let f = File::create(dir.join("attention_trace.csv")).context("creating attention_trace.csv")?;
    write_trace_csv(&rows, BufWriter::new(f))?;
    Ok(())
}

pub fn run(r: &TraceRun, dir: &Path) -> Result<()> {
    let (_, model, dataset) = config::model_and_data(
        require(r.checkpoint.as_ref(), "--checkpoint")?,
        require(r.data.as_ref(), "--data")?,
    )?;
    let seqs = dataset.split(r.split);
    let seqs = &seqs[..r.max_sequences.unwrap_or(seqs.len()).min(seqs.len())];
    if seqs.is_empty() {
        anyhow::bail!("split {} has no sequences", r.split.name());
    }
    config::prepare(dir, r)?;
    trace_into(&model, seqs, r.steps.as_deref(), dir)?;
    eprintln!("traced co-attention over {} sequences", seqs.len());
    Ok(())
}
