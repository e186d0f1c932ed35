//! Forward noising, reverse sampling and the variational bound.
//!
//! Steps are 1-indexed: `k = 1..=K`, with `k = 0` the clean value.

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::denoiser::Denoiser;
use crate::encoder::{EncoderInput, HiddenRepresentation, SpaceInput};
use crate::error::{Error, Result};
use crate::events::{Event, EventSequence, Location, SpaceSpec};
use crate::model::Model;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

/// Linear variance schedule with derived `alpha` and cumulative `alpha_bar`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionSchedule {
    config: ScheduleConfig,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn new(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        Self::from_config(ScheduleConfig {
            steps,
            beta_start,
            beta_end,
        })
    }

    pub fn from_config(config: ScheduleConfig) -> Result<Self> {
        let ScheduleConfig {
            steps,
            beta_start,
            beta_end,
        } = config;
        if steps == 0 {
            return Err(Error::invalid("diffusion needs at least one step"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::invalid(format!(
                "beta bounds must satisfy 0 < start <= end < 1, got {beta_start} and {beta_end}"
            )));
        }
        let beta: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let alpha_bar = alpha
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(Self {
            config,
            beta,
            alpha,
            alpha_bar,
        })
    }

    pub fn config(&self) -> ScheduleConfig {
        self.config
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn check(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.steps() {
            return Err(Error::invalid(format!("step {k} outside 1..={}", self.steps())));
        }
        Ok(())
    }

    /// `beta_k`, 1-indexed.
    pub fn beta(&self, k: usize) -> f64 {
        self.beta[k - 1]
    }

    pub fn alpha(&self, k: usize) -> f64 {
        self.alpha[k - 1]
    }

    /// `alpha_bar_k`, with `alpha_bar_0 = 1`.
    pub fn alpha_bar(&self, k: usize) -> f64 {
        if k == 0 {
            1.0
        } else {
            self.alpha_bar[k - 1]
        }
    }

    /// Variance of `q(x_{k-1} | x_k, x_0)`.
    pub fn posterior_variance(&self, k: usize) -> f64 {
        self.beta(k) * (1.0 - self.alpha_bar(k - 1)) / (1.0 - self.alpha_bar(k))
    }

    /// `x_k = sqrt(ab_k) x0 + sqrt(1 - ab_k) eps`, per coordinate.
    pub fn q_sample(&self, x0: &[f64], k: usize, eps: &[f64]) -> Result<Vec<f64>> {
        self.check(k)?;
        if x0.len() != eps.len() {
            return Err(Error::shape("q_sample", format!("{} values, {} noise draws", x0.len(), eps.len())));
        }
        let ab = self.alpha_bar(k);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok(x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
    }

    /// Mean of the reverse step given predicted noise.
    pub fn reverse_mean(&self, x_k: f64, k: usize, eps_pred: f64) -> f64 {
        (x_k - self.beta(k) / (1.0 - self.alpha_bar(k)).sqrt() * eps_pred) / self.alpha(k).sqrt()
    }

    /// One reverse step `x_k -> x_{k-1}`. The noise `z` is ignored at `k = 1`.
    pub fn p_sample_step(&self, x_k: &[f64], k: usize, eps_pred: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        self.check(k)?;
        if x_k.len() != eps_pred.len() || (k > 1 && z.len() != x_k.len()) {
            return Err(Error::shape(
                "p_sample_step",
                format!("{} values, {} predictions, {} noise draws", x_k.len(), eps_pred.len(), z.len()),
            ));
        }
        let sigma = if k > 1 { self.beta(k).sqrt() } else { 0.0 };
        Ok(x_k
            .iter()
            .zip(eps_pred)
            .enumerate()
            .map(|(i, (&x, &e))| {
                let noise = if k > 1 { sigma * z[i] } else { 0.0 };
                self.reverse_mean(x, k, e) + noise
            })
            .collect())
    }

    /// Per-coordinate bound term for step `k` given the clean value, the
    /// noisy value and the predicted noise: the Gaussian KL against the
    /// posterior for `k >= 2`, the reconstruction NLL for `k = 1`.
    pub fn step_term(&self, x0: f64, x_k: f64, k: usize, eps_pred: f64) -> f64 {
        let beta = self.beta(k);
        let mean = self.reverse_mean(x_k, k, eps_pred);
        if k == 1 {
            return 0.5 * (2.0 * PI * beta).ln() + (x0 - mean).powi(2) / (2.0 * beta);
        }
        let ab = self.alpha_bar(k);
        let ab_prev = self.alpha_bar(k - 1);
        let post_mean =
            ab_prev.sqrt() * beta / (1.0 - ab) * x0 + self.alpha(k).sqrt() * (1.0 - ab_prev) / (1.0 - ab) * x_k;
        let post_var = self.posterior_variance(k);
        0.5 * ((beta / post_var).ln() + post_var / beta + (post_mean - mean).powi(2) / beta - 1.0)
    }

    /// `KL(q(x_K | x_0) || N(0, 1))` for one coordinate.
    pub fn prior_term(&self, x0: f64) -> f64 {
        let ab = self.alpha_bar(self.steps());
        0.5 * (-(1.0 - ab).ln() + (1.0 - ab) + ab * x0 * x0 - 1.0)
    }

    /// Snapshot steps `{K, 3K/4, K/2, K/4, 1, 0}`, deduplicated, descending.
    pub fn snapshot_steps(&self) -> Vec<usize> {
        let k = self.steps();
        let mut steps = vec![k, 3 * k / 4, k / 2, k / 4, 1, 0];
        steps.dedup();
        steps.retain(|&s| s <= k);
        steps.sort_unstable_by(|a, b| b.cmp(a));
        steps.dedup();
        steps
    }
}

pub fn standard_normal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Nearest row of `table` to `point`; ties go to the smallest id.
pub fn round_to_location(point: &[f64], table: &[Vec<f64>]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (id, row) in table.iter().enumerate() {
        if row.len() != point.len() {
            return Err(Error::shape("round_to_location", format!("{} vs {}", point.len(), row.len())));
        }
        let d: f64 = row.iter().zip(point).map(|(a, b)| (a - b).powi(2)).sum();
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((id, d));
        }
    }
    best.map(|(id, _)| id).ok_or_else(|| Error::invalid("empty location table"))
}

/// Denoising snapshots of sampled events at selected steps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    /// `(step, samples)` in visiting order; each sample is the chain state
    /// `[tau, s_1, ..]` in standardized units (embedding units for
    /// discrete space).
    pub snapshots: Vec<(usize, Vec<Vec<f64>>)>,
}

impl Trajectory {
    pub fn at(&self, step: usize) -> Option<&[Vec<f64>]> {
        self.snapshots.iter().find(|(s, _)| *s == step).map(|(_, v)| v.as_slice())
    }

    /// Appends the samples of `other`, which must visit the same steps.
    pub fn append(&mut self, other: Trajectory) -> Result<()> {
        if self.snapshots.is_empty() {
            *self = other;
            return Ok(());
        }
        if self.snapshots.len() != other.snapshots.len()
            || self.snapshots.iter().zip(&other.snapshots).any(|(a, b)| a.0 != b.0)
        {
            return Err(Error::invalid("trajectories visit different steps"));
        }
        for (mine, (_, theirs)) in self.snapshots.iter_mut().zip(other.snapshots) {
            mine.1.extend(theirs);
        }
        Ok(())
    }

    /// Rows `step,sample_id,z_tau,z_1..,tau,s_1..s_D` (or `tau,loc_id`):
    /// the chain state followed by its value in data units.
    pub fn write_csv<T: Scalar, W: Write>(&self, model: &Model<T>, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let width = model.config.space_dim();
        let table = model.config.space.is_discrete().then(|| model.location_table());
        let mut header = vec!["step".to_string(), "sample_id".into(), "z_tau".into()];
        header.extend((1..=width).map(|i| format!("z_{i}")));
        header.push("tau".into());
        match model.config.space {
            SpaceSpec::Continuous { dim } => header.extend((1..=dim).map(|i| format!("s_{i}"))),
            SpaceSpec::Discrete { .. } => header.push("loc_id".into()),
        }
        w.write_record(&header).map_err(csv_err)?;
        for (step, samples) in &self.snapshots {
            for (i, row) in samples.iter().enumerate() {
                if row.len() != width + 1 {
                    return Err(Error::shape("trajectory", format!("row of {} values for width {}", row.len(), width + 1)));
                }
                let mut rec = vec![step.to_string(), i.to_string()];
                rec.extend(row.iter().map(|v| v.to_string()));
                rec.push(model.stats.denormalize_interval(row[0]).to_string());
                match &table {
                    Some(t) => rec.push(round_to_location(&row[1..], t)?.to_string()),
                    None => rec.extend(model.stats.denormalize_coords(&row[1..]).iter().map(|v| v.to_string())),
                }
                w.write_record(&rec).map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Clean diffusion targets of every event of a sequence, in model units,
/// plus the encoder input of the history.
#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    pub input: EncoderInput,
    /// Standardized intervals.
    pub tau: Vec<f64>,
    /// Standardized coordinates, or location embeddings, row-major.
    pub space: Vec<f64>,
}

impl Targets {
    pub fn len(&self) -> usize {
        self.tau.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tau.is_empty()
    }
}

pub fn sequence_targets<T: Scalar>(model: &Model<T>, seq: &EventSequence) -> Result<Targets> {
    let input = EncoderInput::from_events(&seq.events, seq.window_start, &model.stats, &model.config.space)?;
    let tau = seq.intervals().into_iter().map(|t| model.stats.normalize_interval(t)).collect();
    let space = match &input.space {
        SpaceInput::Coords(rows) => rows.iter().flatten().copied().collect(),
        SpaceInput::Ids(ids) => {
            let table = model.location_table();
            ids.iter().flat_map(|&i| table[i].iter().copied()).collect()
        }
    };
    Ok(Targets { input, tau, space })
}

/// One draw of the next event.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledEvent {
    /// Interval since the previous event, data units, clamped at zero.
    pub tau: f64,
    pub location: Location,
}

/// Runs the reverse chain once for every row of `h`. Snapshots at `steps`
/// (0 being the final output) record the chain state.
pub fn sample_rows<T: Scalar, R: Rng + ?Sized>(
    model: &Model<T>,
    h: &HiddenRepresentation<T>,
    rng: &mut R,
    steps: &[usize],
) -> Result<(Vec<SampledEvent>, Trajectory)> {
    let sched = &model.schedule;
    let d = model.config.space_dim();
    let mut den = Denoiser::new(model, h)?;
    let rows = den.rows();
    let mut tau = standard_normal(rows, rng);
    let mut space = standard_normal(rows * d, rng);
    let mut traj = Trajectory::default();
    let snap = |k: usize, tau: &[f64], space: &[f64], traj: &mut Trajectory| {
        if steps.contains(&k) {
            let rows_out = (0..rows)
                .map(|r| {
                    let mut row = vec![tau[r]];
                    row.extend_from_slice(&space[r * d..(r + 1) * d]);
                    row
                })
                .collect();
            traj.snapshots.push((k, rows_out));
        }
    };
    for k in (1..=sched.steps()).rev() {
        snap(k, &tau, &space, &mut traj);
        let pred = den.predict(&space, &tau, k)?;
        let (zt, zs) = if k > 1 {
            (standard_normal(rows, rng), standard_normal(rows * d, rng))
        } else {
            (Vec::new(), Vec::new())
        };
        tau = sched.p_sample_step(&tau, k, &pred.eps_t, &zt)?;
        space = sched.p_sample_step(&space, k, &pred.eps_s, &zs)?;
    }
    snap(0, &tau, &space, &mut traj);
    let table = model.config.space.is_discrete().then(|| model.location_table());
    let events = (0..rows)
        .map(|r| {
            let s = &space[r * d..(r + 1) * d];
            let location = match &table {
                Some(t) => Location::Id(round_to_location(s, t)?),
                None => Location::Coords(model.stats.denormalize_coords(s)),
            };
            Ok(SampledEvent {
                tau: model.stats.denormalize_interval(tau[r]).max(0.0),
                location,
            })
        })
        .collect::<Result<_>>()?;
    Ok((events, traj))
}

/// `n` independent draws of the event following `history`.
pub fn sample_event<T: Scalar, R: Rng + ?Sized>(
    model: &Model<T>,
    history: &[Event],
    window_start: f64,
    n: usize,
    rng: &mut R,
) -> Result<Vec<SampledEvent>> {
    if n == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let input = EncoderInput::from_events(history, window_start, &model.stats, &model.config.space)?;
    let h = model.encode(&input)?;
    let h = h.repeat_rows(&[history.len()], n);
    Ok(sample_rows(model, &h, rng, &[])?.0)
}

/// Bound on the negative log-likelihood of one event, nats, data units.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EventNll {
    pub temporal: f64,
    pub spatial: f64,
}

/// Variational bound for clean targets given history rows `h` (one per
/// target). Each step term uses a fresh forward draw; `draws` repeats
/// and averages the estimate. Change-of-variables corrections for the
/// standardization are included.
pub fn vlb_rows<T: Scalar, R: Rng + ?Sized>(
    model: &Model<T>,
    h: &HiddenRepresentation<T>,
    tau0: &[f64],
    space0: &[f64],
    draws: usize,
    rng: &mut R,
) -> Result<Vec<EventNll>> {
    let sched = &model.schedule;
    let d = model.config.space_dim();
    let rows = tau0.len();
    if h.positions() != rows || space0.len() != rows * d {
        return Err(Error::shape("vlb", format!("{} history rows for {rows} targets", h.positions())));
    }
    if draws == 0 {
        return Err(Error::invalid("VLB needs at least one draw"));
    }
    let mut den = Denoiser::new(model, h)?;
    let mut acc = vec![EventNll::default(); rows];
    for _ in 0..draws {
        for k in 1..=sched.steps() {
            let et = standard_normal(rows, rng);
            let es = standard_normal(rows * d, rng);
            let tk = sched.q_sample(tau0, k, &et)?;
            let sk = sched.q_sample(space0, k, &es)?;
            let pred = den.predict(&sk, &tk, k)?;
            for r in 0..rows {
                acc[r].temporal += sched.step_term(tau0[r], tk[r], k, pred.eps_t[r]);
                for j in r * d..(r + 1) * d {
                    acc[r].spatial += sched.step_term(space0[j], sk[j], k, pred.eps_s[j]);
                }
            }
        }
    }
    let (lt, ls) = (model.stats.time_log_scale(), model.stats.space_log_scale());
    Ok(acc
        .into_iter()
        .enumerate()
        .map(|(r, a)| EventNll {
            temporal: a.temporal / draws as f64 + sched.prior_term(tau0[r]) + lt,
            spatial: a.spatial / draws as f64
                + space0[r * d..(r + 1) * d].iter().map(|&x| sched.prior_term(x)).sum::<f64>()
                + ls,
        })
        .collect())
}

/// Per-event bound for every event of `seq`, each conditioned on its true
/// history.
pub fn vlb_nll<T: Scalar, R: Rng + ?Sized>(
    model: &Model<T>,
    seq: &EventSequence,
    draws: usize,
    rng: &mut R,
) -> Result<Vec<EventNll>> {
    let targets = sequence_targets(model, seq)?;
    let h = model.encode(&targets.input.prefix(seq.len() - 1))?;
    vlb_rows(model, &h, &targets.tau, &targets.space, draws, rng)
}
