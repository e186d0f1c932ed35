use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use dstpp::eval::{evaluate, mean_baseline, poisson_interval_nll, write_results_row, EvalConfig, MetricsReport, ResultsRow};
use dstpp::{Dataset, Model, Split};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::sample::parse_split;
use crate::config::{self, require};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateRun {
    pub checkpoint: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub split: Split,
    /// Dataset label for the results table.
    pub name: String,
    pub eval: EvalConfig,
    /// Results table to append to; `<out>/results.csv` is rewritten when absent.
    pub results: Option<PathBuf>,
}

impl Default for EvaluateRun {
    fn default() -> Self {
        Self {
            checkpoint: None,
            data: None,
            split: Split::Test,
            name: "dataset".into(),
            eval: EvalConfig::default(),
            results: None,
        }
    }
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_parser = parse_split)]
    pub split: Option<Split>,
    #[arg(long)]
    pub name: Option<String>,
    /// Draws per point prediction.
    #[arg(long)]
    pub n_samples: Option<usize>,
    #[arg(long)]
    pub vlb_draws: Option<usize>,
    /// Report the likelihood bound only.
    #[arg(long)]
    pub nll_only: bool,
    /// Predict autoregressively from the model's own predictions.
    #[arg(long)]
    pub rollout: bool,
    #[arg(long)]
    pub results: Option<PathBuf>,
}

pub fn resolve(config: Option<&Path>, seed: Option<u64>, args: &EvaluateArgs) -> Result<EvaluateRun> {
    let mut r: EvaluateRun = config::load(config)?;
    if args.checkpoint.is_some() {
        r.checkpoint = args.checkpoint.clone();
    }
    if args.data.is_some() {
        r.data = args.data.clone();
    }
    if let Some(s) = args.split {
        r.split = s;
    }
    if let Some(n) = &args.name {
        r.name = n.clone();
    }
    if let Some(n) = args.n_samples {
        r.eval.n_samples = n;
    }
    if let Some(n) = args.vlb_draws {
        r.eval.vlb_draws = n;
    }
    r.eval.nll_only |= args.nll_only;
    r.eval.rollout |= args.rollout;
    if args.results.is_some() {
        r.results = args.results.clone();
    }
    if let Some(s) = seed {
        r.eval.seed = s;
    }
    require(r.checkpoint.as_ref(), "--checkpoint")?;
    require(r.data.as_ref(), "--data")?;
    if r.eval.n_samples == 0 || r.eval.vlb_draws == 0 {
        return Err(config::usage("--n-samples and --vlb-draws must be at least 1"));
    }
    Ok(r)
}

/// Metrics of `model` on one split together with reference predictors
/// fitted on the training split.
pub fn report(model: &Model, dataset: &Dataset, split: Split, cfg: &EvalConfig) -> Result<(MetricsReport, serde_json::Value)> {
    let seqs = dataset.split(split);
    let metrics = evaluate(model, seqs, cfg)?;
    let (rate, poisson_nll) = poisson_interval_nll(&dataset.train, seqs)?;
    let mean = mean_baseline(&dataset.train, seqs)?;
    let baselines = json!({
        "poisson_rate": rate,
        "poisson_nll_t": poisson_nll,
        "mean_interval_rmse": mean.rmse_time,
        "mean_location_euclid": mean.euclid_space,
    });
    Ok((metrics, baselines))
}

pub fn run(r: &EvaluateRun, dir: &Path) -> Result<()> {
    let (ck, model, dataset) = config::model_and_data(
        require(r.checkpoint.as_ref(), "--checkpoint")?,
        require(r.data.as_ref(), "--data")?,
    )?;
    config::prepare(dir, r)?;
    let (metrics, baselines) = report(&model, &dataset, r.split, &r.eval)?;
    let doc = json!({
        "split": r.split,
        "metrics": metrics,
        "baselines": baselines,
        "checkpoint_validation": ck.validation,
    });
    config::write_json(&dir.join("metrics.json"), &doc)?;
    let row = ResultsRow::new(&r.name, r.split.name(), model.schedule.steps(), r.eval.seed, &metrics);
    match &r.results {
        Some(path) => {
            let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
            let f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .with_context(|| format!("opening {}", path.display()))?;
            write_results_row(&row, f, fresh)?;
        }
        None => write_results_row(&row, File::create(dir.join("results.csv"))?, true)?,
    }
    eprintln!(
        "{} split: nll_t {:.4}, nll_s {:.4} over {} events",
        r.split.name(),
        metrics.nll_temporal,
        metrics.nll_spatial,
        metrics.n_events
    );
    Ok(())
}
