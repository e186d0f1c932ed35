use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use dstpp::train::{train, write_log_csv, Checkpoint, TrainConfig};
use dstpp::{Dataset, TrainOutcome};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{self, require};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRun {
    pub data: Option<PathBuf>,
    pub train: TrainConfig,
}

#[derive(Args, Debug, Default)]
pub struct TrainArgs {
    /// Dataset directory (CSV) or JSON file.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub hyper: HyperArgs,
}

/// Training hyperparameter overrides.
#[derive(Args, Debug, Default)]
pub struct HyperArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    /// Events per optimizer step.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Diffusion steps.
    #[arg(long = "K")]
    pub steps: Option<usize>,
    #[arg(long)]
    pub beta_start: Option<f64>,
    #[arg(long)]
    pub beta_end: Option<f64>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub validation_every: Option<usize>,
    #[arg(long, conflicts_with = "no_clip")]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub no_clip: bool,
    #[arg(long)]
    pub draws_per_event: Option<usize>,
}

impl HyperArgs {
    pub fn apply(&self, t: &mut TrainConfig) {
        macro_rules! set {
            ($($flag:ident => $field:expr),* $(,)?) => {
                $(if let Some(v) = self.$flag { $field = v; })*
            };
        }
        set!(
            epochs => t.epochs,
            learning_rate => t.learning_rate,
            batch_size => t.batch_size,
            steps => t.schedule.steps,
            beta_start => t.schedule.beta_start,
            beta_end => t.schedule.beta_end,
            embed_dim => t.embed_dim,
            layers => t.branch_layers,
            validation_every => t.validation_every,
            draws_per_event => t.draws_per_event,
        );
        if let Some(c) = self.clip_norm {
            t.clip_norm = Some(c);
        }
        if self.no_clip {
            t.clip_norm = None;
        }
    }
}

pub fn resolve(config: Option<&Path>, seed: Option<u64>, args: &TrainArgs) -> Result<TrainRun> {
    let mut r: TrainRun = config::load(config)?;
    if args.data.is_some() {
        r.data = args.data.clone();
    }
    args.hyper.apply(&mut r.train);
    if let Some(s) = seed {
        r.train.seed = s;
    }
    require(r.data.as_ref(), "--data")?;
    r.train.validate().map_err(|e| config::usage(e.to_string()))?;
    Ok(r)
}

/// Trains on `dataset` and writes `checkpoint.json`, `train_log.csv` and
/// `summary.json` into `dir`.
pub fn train_into(dataset: &Dataset, cfg: &TrainConfig, dir: &Path) -> Result<TrainOutcome> {
    eprintln!(
        "training on {} sequences ({} events), {} epochs, K = {}",
        dataset.train.len(),
        dataset.num_events(dstpp::Split::Train),
        cfg.epochs,
        cfg.schedule.steps
    );
    let out = train::<f64>(dataset, cfg)?;
    let ck = Checkpoint::new(&out.model, cfg, out.best);
    ck.save(&dir.join("checkpoint.json"))?;
    let log = File::create(dir.join("train_log.csv")).context("creating train_log.csv")?;
    write_log_csv(&out.log, BufWriter::new(log))?;
    let summary = json!({
        "epochs": cfg.epochs,
        "final_train_loss": out.epoch_losses.last(),
        "best_validation": out.best,
    });
    config::write_json(&dir.join("summary.json"), &summary)?;
    if let Some(b) = out.best {
        eprintln!("best validation at epoch {}: nll_t {:.4}, nll_s {:.4}", b.epoch, b.nll_t, b.nll_s);
    }
    Ok(out)
}

pub fn run(r: &TrainRun, dir: &Path) -> Result<()> {
    let data = require(r.data.as_ref(), "--data")?;
    let dataset = config::dataset(data)?;
    config::prepare(dir, r)?;
    train_into(&dataset, &r.train, dir)?;
    Ok(())
}
