use std::path::{Path, PathBuf};

use anyhow::Result;
use clap::{Args, ValueEnum};
use dstpp::events::{save_dataset, DatasetFormat};
use dstpp::simulate::{
    hawkes_gmm_default_hawkes, simulate_dataset, simulate_hawkes_gmm_dataset, simulate_independent,
    simulate_location_cycle, DatasetShape, Excitation, GmmSpatialParams, HawkesParams, MarkCoupling, TemporalProcess,
};
use dstpp::{Dataset, Split};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{self, require, usage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Generator {
    Poisson,
    Hawkes,
    SelfCorrecting,
    HawkesGmm,
    /// Hawkes times with an independent bivariate Gaussian location.
    Independent,
    /// Discrete locations visited in a fixed cycle at Poisson times.
    Cycle,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub generator: Option<Generator>,
    pub seed: u64,
    pub shape: DatasetShape,
    pub rate: Option<f64>,
    pub mu: Option<f64>,
    pub alpha: Option<f64>,
    pub excitations: Option<Vec<Excitation>>,
    pub allow_supercritical: bool,
    pub locations: Option<usize>,
    /// Location mixture; generator-specific default when absent.
    pub spatial: Option<GmmSpatialParams>,
    pub coupling: MarkCoupling,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long = "gen", value_enum)]
    pub generator: Option<Generator>,
    /// Poisson rate (poisson, cycle).
    #[arg(long)]
    pub rate: Option<f64>,
    /// Base rate (hawkes, self_correcting, hawkes_gmm).
    #[arg(long)]
    pub mu: Option<f64>,
    /// Self-correction strength (self_correcting).
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Exponential kernel `weight,decay`; repeat for several.
    #[arg(long = "excitation", value_parser = parse_excitation)]
    pub excitations: Vec<Excitation>,
    #[arg(long)]
    pub allow_supercritical: bool,
    /// Number of locations (cycle).
    #[arg(long)]
    pub locations: Option<usize>,
    #[arg(long, value_enum)]
    pub coupling: Option<CouplingArg>,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_val: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    /// Observation window `start,end`.
    #[arg(long, value_parser = parse_pair)]
    pub window: Option<(f64, f64)>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum CouplingArg {
    Multivariate,
    Independent,
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected `a,b`, got {s:?}"))?;
    let a = a.trim().parse().map_err(|e| format!("{a:?}: {e}"))?;
    let b = b.trim().parse().map_err(|e| format!("{b:?}: {e}"))?;
    Ok((a, b))
}

fn parse_excitation(s: &str) -> Result<Excitation, String> {
    parse_pair(s).map(|(weight, decay)| Excitation { weight, decay })
}

impl SimulateArgs {
    fn apply(&self, c: &mut SimulateConfig) {
        if let Some(g) = self.generator {
            c.generator = Some(g);
        }
        for (slot, v) in [(&mut c.rate, self.rate), (&mut c.mu, self.mu), (&mut c.alpha, self.alpha)] {
            if v.is_some() {
                *slot = v;
            }
        }
        if !self.excitations.is_empty() {
            c.excitations = Some(self.excitations.clone());
        }
        c.allow_supercritical |= self.allow_supercritical;
        if self.locations.is_some() {
            c.locations = self.locations;
        }
        match self.coupling {
            Some(CouplingArg::Multivariate) => c.coupling = MarkCoupling::Multivariate,
            Some(CouplingArg::Independent) => c.coupling = MarkCoupling::Independent,
            None => {}
        }
        if let Some(n) = self.n_train {
            c.shape.n_train = n;
        }
        if let Some(n) = self.n_val {
            c.shape.n_val = n;
        }
        if let Some(n) = self.n_test {
            c.shape.n_test = n;
        }
        if let Some(w) = self.window {
            c.shape.window = w;
        }
    }
}

pub fn resolve(config: Option<&Path>, seed: Option<u64>, args: &SimulateArgs) -> Result<SimulateConfig> {
    let mut c: SimulateConfig = config::load(config)?;
    args.apply(&mut c);
    if let Some(s) = seed {
        c.seed = s;
    }
    require(c.generator, "--gen")?;
    Ok(c)
}

/// Rejects parameters the generator does not read.
fn only(c: &SimulateConfig, gen: Generator, allowed: &[&str]) -> Result<()> {
    let given = [
        ("rate", c.rate.is_some()),
        ("mu", c.mu.is_some()),
        ("alpha", c.alpha.is_some()),
        ("excitation", c.excitations.is_some()),
        ("locations", c.locations.is_some()),
        ("spatial", c.spatial.is_some()),
    ];
    for (name, present) in given {
        if present && !allowed.contains(&name) {
            let gen = gen.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default();
            return Err(usage(format!("parameter {name} does not apply to generator {gen}")));
        }
    }
    Ok(())
}

fn hawkes(c: &SimulateConfig, horizon: f64) -> Result<HawkesParams> {
    let excitations = require(c.excitations.clone(), "--excitation")?;
    Ok(HawkesParams {
        mu: require(c.mu, "--mu")?,
        excitations,
        horizon,
        allow_supercritical: c.allow_supercritical,
        ..HawkesParams::new(1.0, vec![], horizon)
    })
}

/// Builds the dataset and a description of what generated it.
pub fn generate(c: &SimulateConfig) -> Result<(Dataset, serde_json::Value)> {
    let gen = require(c.generator, "--gen")?;
    let (a, b) = c.shape.window;
    let horizon = b - a;
    let gaussian = || c.spatial.clone().unwrap_or_else(GmmSpatialParams::synthetic_independent);
    let (dataset, params) = match gen {
        Generator::Poisson | Generator::Hawkes | Generator::SelfCorrecting => {
            let process = match gen {
                Generator::Poisson => {
                    only(c, gen, &["rate", "spatial"])?;
                    TemporalProcess::Poisson { rate: require(c.rate, "--rate")? }
                }
                Generator::Hawkes => {
                    only(c, gen, &["mu", "excitation", "spatial"])?;
                    TemporalProcess::Hawkes(hawkes(c, horizon)?)
                }
                _ => {
                    only(c, gen, &["mu", "alpha", "spatial"])?;
                    TemporalProcess::SelfCorrecting {
                        mu: require(c.mu, "--mu")?,
                        alpha: require(c.alpha, "--alpha")?,
                    }
                }
            };
            let spatial = gaussian();
            let d = simulate_dataset(&process, &spatial, &c.shape, c.seed)?;
            (d, json!({ "temporal": process, "spatial": spatial }))
        }
        Generator::HawkesGmm => {
            only(c, gen, &["mu", "excitation", "spatial"])?;
            let mut h = hawkes_gmm_default_hawkes(horizon);
            if let Some(mu) = c.mu {
                h.mu = mu;
            }
            if let Some(e) = &c.excitations {
                h.excitations = e.clone();
            }
            h.allow_supercritical = c.allow_supercritical;
            let spatial = c.spatial.clone().unwrap_or_else(GmmSpatialParams::three_clusters);
            let d = simulate_hawkes_gmm_dataset(&h, &spatial, c.coupling, &c.shape, c.seed)?;
            (d, json!({ "temporal": h, "spatial": spatial, "coupling": c.coupling }))
        }
        Generator::Independent => {
            only(c, gen, &[])?;
            let d = simulate_independent(&c.shape, c.seed)?;
            let h = HawkesParams::synthetic_independent(horizon);
            (d, json!({ "temporal": h, "spatial": GmmSpatialParams::synthetic_independent() }))
        }
        Generator::Cycle => {
            only(c, gen, &["rate", "locations"])?;
            let locations = c.locations.unwrap_or(5);
            let rate = c.rate.unwrap_or(1.0);
            let d = simulate_location_cycle(locations, rate, &c.shape, c.seed)?;
            (d, json!({ "locations": locations, "rate": rate }))
        }
    };
    Ok((dataset, params))
}

/// Writes `<dir>/data` (CSV directory), `manifest.json` and `config.json`.
pub fn run(c: &SimulateConfig, dir: &Path) -> Result<PathBuf> {
    let (dataset, params) = generate(c)?;
    config::prepare(dir, c)?;
    let data = dir.join("data");
    save_dataset(&dataset, &data, DatasetFormat::Csv)?;
    let counts: serde_json::Map<String, serde_json::Value> = Split::ALL
        .iter()
        .map(|&s| {
            (
                s.name().to_string(),
                json!({ "sequences": dataset.split(s).len(), "events": dataset.num_events(s) }),
            )
        })
        .collect();
    let manifest = json!({
        "generator": c.generator,
        "seed": c.seed,
        "shape": c.shape,
        "parameters": params,
        "space": dataset.space,
        "counts": counts,
        "data": "data",
    });
    config::write_json(&dir.join("manifest.json"), &manifest)?;
    eprintln!(
        "simulated {} train / {} val / {} test sequences into {}",
        dataset.train.len(),
        dataset.val.len(),
        dataset.test.len(),
        data.display()
    );
    Ok(data)
}
