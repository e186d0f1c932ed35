use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use dstpp::diffusion::{sample_rows, Trajectory};
use dstpp::encoder::EncoderInput;
use dstpp::eval::sequence_rng;
use dstpp::{EventSequence, Location, Model, SpaceSpec, Split};
use serde::{Deserialize, Serialize};

use crate::config::{self, require};

const SAMPLE_STREAM: u64 = 301;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleRun {
    pub checkpoint: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub split: Split,
    /// Draws per event position.
    pub n_samples: usize,
    /// First sequences of the split only.
    pub max_sequences: Option<usize>,
    pub seed: u64,
}

impl Default for SampleRun {
    fn default() -> Self {
        Self {
            checkpoint: None,
            data: None,
            split: Split::Test,
            n_samples: 1,
            max_sequences: None,
            seed: 0,
        }
    }
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_parser = parse_split)]
    pub split: Option<Split>,
    #[arg(long)]
    pub n_samples: Option<usize>,
    #[arg(long)]
    pub max_sequences: Option<usize>,
}

pub fn parse_split(s: &str) -> Result<Split, String> {
    s.parse().map_err(|e: dstpp::Error| e.to_string())
}

pub fn resolve(config: Option<&Path>, seed: Option<u64>, args: &SampleArgs) -> Result<SampleRun> {
    let mut r: SampleRun = config::load(config)?;
    if args.checkpoint.is_some() {
        r.checkpoint = args.checkpoint.clone();
    }
    if args.data.is_some() {
        r.data = args.data.clone();
    }
    if let Some(s) = args.split {
        r.split = s;
    }
    if let Some(n) = args.n_samples {
        r.n_samples = n;
    }
    if args.max_sequences.is_some() {
        r.max_sequences = args.max_sequences;
    }
    if let Some(s) = seed {
        r.seed = s;
    }
    require(r.checkpoint.as_ref(), "--checkpoint")?;
    require(r.data.as_ref(), "--data")?;
    if r.n_samples == 0 {
        return Err(config::usage("--n-samples must be at least 1"));
    }
    Ok(r)
}

/// One sampled event with its conditioning position.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub seq_id: String,
    pub event_index: usize,
    pub sample_id: usize,
    pub t: f64,
    pub tau: f64,
    pub location: Location,
}

/// Draws `n` events at every teacher-forced position of each sequence,
/// with snapshots of the reverse chain at the model's snapshot steps.
pub fn draw(model: &Model, seqs: &[EventSequence], n: usize, seed: u64) -> Result<(Vec<Sample>, Trajectory)> {
    let steps = model.schedule.snapshot_steps();
    let mut samples = Vec::new();
    let mut traj = Trajectory::default();
    for seq in seqs {
        let input = EncoderInput::from_events(&seq.events, seq.window_start, &model.stats, &model.config.space)?;
        let l = seq.len();
        let h = model.encode(&input.prefix(l - 1))?;
        let positions: Vec<usize> = (0..l).collect();
        let mut rng = sequence_rng(seed, SAMPLE_STREAM, &seq.id);
        let (events, t) = sample_rows(model, &h.repeat_rows(&positions, n), &mut rng, &steps)?;
        traj.append(t)?;
        for (row, e) in events.into_iter().enumerate() {
            let (i, j) = (row / n, row % n);
            let prev = if i == 0 { seq.window_start } else { seq.events[i - 1].t };
            samples.push(Sample {
                seq_id: seq.id.clone(),
                event_index: i,
                sample_id: j,
                t: prev + e.tau,
                tau: e.tau,
                location: e.location,
            });
        }
    }
    Ok((samples, traj))
}

pub fn write_samples(path: &Path, samples: &[Sample], space: &SpaceSpec) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let mut header: Vec<String> = ["seq_id", "event_index", "sample_id", "t", "tau"].map(String::from).to_vec();
    match *space {
        SpaceSpec::Continuous { dim } => header.extend((1..=dim).map(|d| format!("s_{d}"))),
        SpaceSpec::Discrete { .. } => header.push("loc_id".into()),
    }
    w.write_record(&header)?;
    for s in samples {
        let mut rec = vec![
            s.seq_id.clone(),
            s.event_index.to_string(),
            s.sample_id.to_string(),
            s.t.to_string(),
            s.tau.to_string(),
        ];
        match &s.location {
            Location::Coords(c) => rec.extend(c.iter().map(|v| v.to_string())),
            Location::Id(i) => rec.push(i.to_string()),
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn run(r: &SampleRun, dir: &Path) -> Result<()> {
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
    let (samples, traj) = draw(&model, seqs, r.n_samples, r.seed)?;
    write_samples(&dir.join("samples.csv"), &samples, &model.config.space)?;
    let f = File::create(dir.join("snapshots.csv")).context("creating snapshots.csv")?;
    traj.write_csv(&model, BufWriter::new(f))?;
    eprintln!("wrote {} samples from {} sequences", samples.len(), seqs.len());
    Ok(())
}
