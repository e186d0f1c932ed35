use std::path::Path;

use anyhow::Result;
use clap::Args;
use dstpp::eval::EvalConfig;
use dstpp::simulate::DatasetShape;
use dstpp::train::TrainConfig;
use dstpp::Split;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::simulate::{self, Generator, SimulateConfig};
use super::train::{train_into, HyperArgs};
use super::{evaluate, sample, trace};
use crate::config;

/// Simulate Synthetic-Independent data, train, evaluate on the test
/// split, trace co-attention and sample with denoising snapshots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReproduceRun {
    pub seed: u64,
    pub shape: DatasetShape,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    /// Test sequences used for sampling and tracing.
    pub sample_sequences: usize,
}

impl Default for ReproduceRun {
    fn default() -> Self {
        Self {
            seed: 0,
            shape: DatasetShape::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            sample_sequences: 20,
        }
    }
}

#[derive(Args, Debug)]
pub struct ReproduceArgs {
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_val: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub n_samples: Option<usize>,
    /// Skip sampling-based prediction metrics in the evaluation.
    #[arg(long)]
    pub nll_only: bool,
    #[arg(long)]
    pub sample_sequences: Option<usize>,
}

pub fn resolve(config: Option<&Path>, seed: Option<u64>, args: &ReproduceArgs) -> Result<ReproduceRun> {
    let mut r: ReproduceRun = config::load(config)?;
    args.hyper.apply(&mut r.train);
    for (slot, v) in [
        (&mut r.shape.n_train, args.n_train),
        (&mut r.shape.n_val, args.n_val),
        (&mut r.shape.n_test, args.n_test),
        (&mut r.eval.n_samples, args.n_samples),
        (&mut r.sample_sequences, args.sample_sequences),
    ] {
        if let Some(v) = v {
            *slot = v;
        }
    }
    r.eval.nll_only |= args.nll_only;
    if let Some(s) = seed {
        r.seed = s;
    }
    r.train.seed = r.seed;
    r.eval.seed = r.seed;
    r.train.validate().map_err(|e| config::usage(e.to_string()))?;
    if r.sample_sequences == 0 || r.eval.n_samples == 0 {
        return Err(config::usage("sample counts must be at least 1"));
    }
    Ok(r)
}

pub fn run(r: &ReproduceRun, dir: &Path) -> Result<()> {
    config::prepare(dir, r)?;
    let sim = SimulateConfig {
        generator: Some(Generator::Independent),
        seed: r.seed,
        shape: r.shape.clone(),
        ..SimulateConfig::default()
    };
    let data = simulate::run(&sim, &dir.join("simulate"))?;
    let dataset = config::dataset(&data)?;

    let train_dir = dir.join("train");
    std::fs::create_dir_all(&train_dir)?;
    let out = train_into(&dataset, &r.train, &train_dir)?;
    let model = out.model;

    let eval_dir = dir.join("evaluate");
    std::fs::create_dir_all(&eval_dir)?;
    let (metrics, baselines) = evaluate::report(&model, &dataset, Split::Test, &r.eval)?;
    config::write_json(
        &eval_dir.join("metrics.json"),
        &json!({ "split": Split::Test, "metrics": metrics, "baselines": baselines, "checkpoint_validation": out.best }),
    )?;
    let row = dstpp::eval::ResultsRow::new("synthetic_independent", "test", model.schedule.steps(), r.seed, &metrics);
    dstpp::eval::write_results_row(&row, std::fs::File::create(eval_dir.join("results.csv"))?, true)?;

    let n = r.sample_sequences.min(dataset.test.len());
    let seqs = &dataset.test[..n];
    let trace_dir = dir.join("trace");
    std::fs::create_dir_all(&trace_dir)?;
    trace::trace_into(&model, seqs, None, &trace_dir)?;

    let sample_dir = dir.join("sample");
    std::fs::create_dir_all(&sample_dir)?;
    let (samples, traj) = sample::draw(&model, seqs, 1, r.seed)?;
    sample::write_samples(&sample_dir.join("samples.csv"), &samples, &model.config.space)?;
    traj.write_csv(&model, std::io::BufWriter::new(std::fs::File::create(sample_dir.join("snapshots.csv"))?))?;

    eprintln!(
        "test nll_t {:.4} (Poisson {:.4}), nll_s {:.4}",
        metrics.nll_temporal, baselines["poisson_nll_t"], metrics.nll_spatial
    );
    Ok(())
}
