//! Ground-truth point-process generators.
//!
//! Temporal generators return sorted event times on `[0, horizon]`; the
//! dataset builders attach locations and assemble [`Dataset`]s. Every
//! generator is a pure function of its parameters and RNG stream.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{Dataset, Event, EventSequence, SpaceSpec};

pub type SimRng = ChaCha8Rng;

/// Independent stream for `(seed, stream, index)`.
pub fn derived_rng(seed: u64, stream: u64, index: u64) -> SimRng {
    let mut x = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    // splitmix64 finalizer
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^= x >> 31;
    SimRng::seed_from_u64(x)
}

fn exp1<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    Exp1.sample(rng)
}

pub fn simulate_poisson<R: Rng + ?Sized>(rate: f64, horizon: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(rate > 0.0 && rate.is_finite() && horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::invalid(format!(
            "Poisson rate and horizon must be positive, got {rate} and {horizon}"
        )));
    }
    let mut times = Vec::new();
    let mut t = 0.0;
    loop {
        t += exp1(rng) / rate;
        if t > horizon {
            return Ok(times);
        }
        times.push(t);
    }
}

/// One exponential kernel term `weight * exp(-decay * dt)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Excitation {
    pub weight: f64,
    pub decay: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HawkesParams {
    pub mu: f64,
    pub excitations: Vec<Excitation>,
    pub horizon: f64,
    /// Permit a branching ratio >= 1. The horizon keeps such runs finite,
    /// and `max_events` bounds them.
    #[serde(default)]
    pub allow_supercritical: bool,
    #[serde(default = "default_max_events")]
    pub max_events: usize,
}

fn default_max_events() -> usize {
    200_000
}

impl HawkesParams {
    pub fn new(mu: f64, excitations: Vec<(f64, f64)>, horizon: f64) -> Self {
        Self {
            mu,
            excitations: excitations
                .into_iter()
                .map(|(weight, decay)| Excitation { weight, decay })
                .collect(),
            horizon,
            allow_supercritical: false,
            max_events: default_max_events(),
        }
    }

    /// Intensity `0.2 + sum_i (0.2 exp(-0.2 (t - t_i)) + 4 exp(-10 (t - t_i)))`.
    /// Its branching ratio is 1.4, so it is flagged supercritical.
    pub fn synthetic_independent(horizon: f64) -> Self {
        Self {
            allow_supercritical: true,
            ..Self::new(0.2, vec![(0.2, 0.2), (4.0, 10.0)], horizon)
        }
    }

    /// Expected offspring per event, `sum_j a_j / b_j`.
    pub fn branching_ratio(&self) -> f64 {
        self.excitations.iter().map(|e| e.weight / e.decay).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::invalid(format!("Hawkes base rate must be positive, got {}", self.mu)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::invalid(format!("Hawkes horizon must be positive, got {}", self.horizon)));
        }
        for e in &self.excitations {
            if !(e.weight >= 0.0 && e.decay > 0.0 && e.weight.is_finite() && e.decay.is_finite()) {
                return Err(Error::invalid(format!("bad excitation term {e:?}")));
            }
        }
        let ratio = self.branching_ratio();
        if ratio >= 1.0 && !self.allow_supercritical {
            return Err(Error::invalid(format!(
                "Hawkes process is unstable: branching ratio {ratio} >= 1"
            )));
        }
        Ok(())
    }

    /// Conditional intensity at `t` given all `history` times strictly before it.
    pub fn intensity(&self, t: f64, history: &[f64]) -> f64 {
        self.mu
            + history
                .iter()
                .filter(|&&ti| ti < t)
                .map(|&ti| {
                    self.excitations
                        .iter()
                        .map(|e| e.weight * (-e.decay * (t - ti)).exp())
                        .sum::<f64>()
                })
                .sum::<f64>()
    }

    /// Compensator increments `Lambda(t_i) - Lambda(t_{i-1})` (from 0 for the
    /// first event). For a correct model these are i.i.d. Exp(1).
    pub fn rescaled_intervals(&self, times: &[f64]) -> Vec<f64> {
        let mut state = vec![0.0; self.excitations.len()];
        let mut prev = 0.0;
        times
            .iter()
            .map(|&t| {
                let dt = t - prev;
                let mut inc = self.mu * dt;
                for (s, e) in state.iter_mut().zip(&self.excitations) {
                    inc += *s / e.decay * -(-e.decay * dt).exp_m1();
                    *s = *s * (-e.decay * dt).exp() + e.weight;
                }
                prev = t;
                inc
            })
            .collect()
    }

    /// Compensator from 0 to `t` given all event `times` (any order past `t` ignored).
    pub fn compensator(&self, t: f64, times: &[f64]) -> f64 {
        self.mu * t
            + times
                .iter()
                .filter(|&&ti| ti < t)
                .map(|&ti| {
                    self.excitations
                        .iter()
                        .map(|e| e.weight / e.decay * -(-e.decay * (t - ti)).exp_m1())
                        .sum::<f64>()
                })
                .sum::<f64>()
    }

    /// `Lambda(t_i) / Lambda(horizon)`. Under the model these are, given the
    /// count, i.i.d. uniform on (0, 1); unlike raw compensator increments
    /// they are not biased by the window cut-off.
    pub fn rescaled_uniforms(&self, times: &[f64]) -> Vec<f64> {
        let total = self.compensator(self.horizon, times);
        let mut acc = 0.0;
        self.rescaled_intervals(times)
            .into_iter()
            .map(|inc| {
                acc += inc;
                acc / total
            })
            .collect()
    }

    /// `E[N(horizon)]` for a single exponential kernel, solved exactly from
    /// the mean-intensity ODE `m' = -(b - a) m + b mu`, `m(0) = mu`.
    pub fn expected_count_single_kernel(&self) -> Option<f64> {
        let [e] = self.excitations.as_slice() else {
            return None;
        };
        let (a, b, mu, t) = (e.weight, e.decay, self.mu, self.horizon);
        let rate = b - a;
        if rate.abs() < 1e-12 {
            return Some(mu * t + 0.5 * a * mu * t * t);
        }
        let m_inf = b * mu / rate;
        Some(m_inf * t + (mu - m_inf) * -(-rate * t).exp_m1() / rate)
    }
}

/// Ogata thinning. The dominating rate is the intensity just after the
/// current time, which bounds the intensity until the next event because
/// every kernel decays monotonically. It is refreshed at every candidate.
pub fn simulate_hawkes<R: Rng + ?Sized>(params: &HawkesParams, rng: &mut R) -> Result<Vec<f64>> {
    simulate_hawkes_components(params, &[1.0], None, rng).map(|v| v.into_iter().map(|(t, _)| t).collect())
}

/// The first `n` events of the process on an unbounded window; the horizon
/// is ignored. Stopping at a fixed count leaves every rescaled interval
/// uncensored.
pub fn simulate_hawkes_events<R: Rng + ?Sized>(params: &HawkesParams, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    if n > params.max_events {
        return Err(Error::invalid(format!("{n} events exceeds the cap of {}", params.max_events)));
    }
    simulate_hawkes_components(params, &[1.0], Some(n), rng).map(|v| v.into_iter().map(|(t, _)| t).collect())
}

/// Multivariate Hawkes with independent self-exciting components sharing
/// one kernel shape; component `c` has base rate `mu * weights[c]`.
/// Returns `(time, component)` pairs.
fn simulate_hawkes_components<R: Rng + ?Sized>(
    params: &HawkesParams,
    weights: &[f64],
    count: Option<usize>,
    rng: &mut R,
) -> Result<Vec<(f64, usize)>> {
    params.validate()?;
    let nk = params.excitations.len();
    let nc = weights.len();
    // state[c * nk + j]: kernel j's excitation from component c's events.
    let mut state = vec![0.0; nc * nk];
    let component_rate = |state: &[f64], c: usize| -> f64 {
        params.mu * weights[c] + state[c * nk..(c + 1) * nk].iter().sum::<f64>()
    };
    let mut out = Vec::new();
    if count == Some(0) {
        return Ok(out);
    }
    let mut t = 0.0;
    loop {
        let bound: f64 = (0..nc).map(|c| component_rate(&state, c)).sum();
        let gap = exp1(rng) / bound;
        t += gap;
        if count.is_none() && t > params.horizon {
            return Ok(out);
        }
        for c in 0..nc {
            for (j, e) in params.excitations.iter().enumerate() {
                state[c * nk + j] *= (-e.decay * gap).exp();
            }
        }
        let rates: Vec<f64> = (0..nc).map(|c| component_rate(&state, c)).collect();
        let lambda: f64 = rates.iter().sum();
        if lambda > bound * (1.0 + 1e-12) {
            return Err(Error::invalid(format!(
                "thinning bound violated: intensity {lambda} exceeds bound {bound}"
            )));
        }
        if rng.random::<f64>() * bound <= lambda {
            let mut u = rng.random::<f64>() * lambda;
            let mut c = nc - 1;
            for (i, r) in rates.iter().enumerate() {
                if u < *r {
                    c = i;
                    break;
                }
                u -= r;
            }
            for (j, e) in params.excitations.iter().enumerate() {
                state[c * nk + j] += e.weight;
            }
            out.push((t, c));
            if Some(out.len()) == count {
                return Ok(out);
            }
            if out.len() > params.max_events {
                return Err(Error::invalid(format!(
                    "Hawkes simulation exceeded {} events",
                    params.max_events
                )));
            }
        }
    }
}

/// Self-correcting process with intensity `exp(mu t - alpha N(t))`.
///
/// Sampled exactly by inverting the compensator between events:
/// from `t_a` with `n` past events, the next time solves
/// `e^{-alpha n} (e^{mu t} - e^{mu t_a}) / mu = E`, `E ~ Exp(1)`.
pub fn simulate_self_correcting<R: Rng + ?Sized>(
    mu: f64,
    alpha: f64,
    horizon: f64,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !(mu > 0.0 && alpha > 0.0 && horizon > 0.0 && mu.is_finite() && alpha.is_finite() && horizon.is_finite()) {
        return Err(Error::invalid(format!(
            "self-correcting parameters must be positive, got mu={mu} alpha={alpha} horizon={horizon}"
        )));
    }
    let mut times = Vec::new();
    let mut t = 0.0f64;
    loop {
        let n = times.len() as f64;
        let log_arg = (alpha * n - mu * t) + (mu * exp1(rng)).ln();
        // t_next = t + ln(1 + mu E e^{alpha n - mu t}) / mu
        let step = if log_arg > 700.0 {
            log_arg / mu
        } else {
            log_arg.exp().ln_1p() / mu
        };
        t += step;
        if t > horizon {
            return Ok(times);
        }
        times.push(t);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Row-major symmetric positive-definite covariance.
    pub cov: Vec<Vec<f64>>,
}

impl GaussianComponent {
    /// Lower Cholesky factor of the covariance.
    fn cholesky(&self) -> Result<Vec<Vec<f64>>> {
        let d = self.mean.len();
        if self.cov.len() != d || self.cov.iter().any(|r| r.len() != d) {
            return Err(Error::invalid("covariance shape does not match the mean"));
        }
        let mut l = vec![vec![0.0; d]; d];
        for i in 0..d {
            for j in 0..=i {
                if (self.cov[i][j] - self.cov[j][i]).abs() > 1e-12 * (1.0 + self.cov[i][j].abs()) {
                    return Err(Error::invalid("covariance is not symmetric"));
                }
                let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
                if i == j {
                    let v = self.cov[i][i] - s;
                    if v <= 0.0 {
                        return Err(Error::invalid("covariance is not positive definite"));
                    }
                    l[i][j] = v.sqrt();
                } else {
                    l[i][j] = (self.cov[i][j] - s) / l[j][j];
                }
            }
        }
        Ok(l)
    }
}

/// Gaussian mixture over locations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmSpatialParams {
    pub components: Vec<GaussianComponent>,
}

impl GmmSpatialParams {
    /// Single bivariate Gaussian from means, standard deviations and correlation.
    pub fn bivariate(mean: [f64; 2], std: [f64; 2], rho: f64) -> Self {
        let c = rho * std[0] * std[1];
        Self {
            components: vec![GaussianComponent {
                weight: 1.0,
                mean: mean.to_vec(),
                cov: vec![vec![std[0] * std[0], c], vec![c, std[1] * std[1]]],
            }],
        }
    }

    /// rho = sqrt(2)/4, mean (4, 7), std (sqrt(2), 2).
    pub fn synthetic_independent() -> Self {
        Self::bivariate([4.0, 7.0], [2f64.sqrt(), 2.0], 2f64.sqrt() / 4.0)
    }

    /// Three equally weighted, well separated isotropic clusters.
    pub fn three_clusters() -> Self {
        let comp = |mean: [f64; 2]| GaussianComponent {
            weight: 1.0 / 3.0,
            mean: mean.to_vec(),
            cov: vec![vec![0.25, 0.0], vec![0.0, 0.25]],
        };
        Self {
            components: vec![comp([-3.0, 0.0]), comp([3.0, 0.0]), comp([0.0, 4.0])],
        }
    }

    pub fn dim(&self) -> usize {
        self.components.first().map_or(0, |c| c.mean.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::invalid("mixture has no components"));
        }
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 || self.components.iter().any(|c| !(c.weight > 0.0)) {
            return Err(Error::invalid(format!("mixture weights must be positive and sum to 1, got {total}")));
        }
        let d = self.dim();
        if !(1..=3).contains(&d) || self.components.iter().any(|c| c.mean.len() != d) {
            return Err(Error::invalid("mixture components must share a dimension in 1..=3"));
        }
        for c in &self.components {
            c.cholesky()?;
        }
        Ok(())
    }

    fn factors(&self) -> Result<Vec<Vec<Vec<f64>>>> {
        self.components.iter().map(|c| c.cholesky()).collect()
    }

    fn draw_from<R: Rng + ?Sized>(&self, c: usize, chol: &[Vec<f64>], rng: &mut R) -> Vec<f64> {
        let comp = &self.components[c];
        let z: Vec<f64> = (0..comp.mean.len()).map(|_| StandardNormal.sample(rng)).collect();
        comp.mean
            .iter()
            .enumerate()
            .map(|(i, m)| m + (0..=i).map(|k| chol[i][k] * z[k]).sum::<f64>())
            .collect()
    }

    fn pick<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let mut u = rng.random::<f64>();
        for (i, c) in self.components.iter().enumerate() {
            if u < c.weight {
                return i;
            }
            u -= c.weight;
        }
        self.components.len() - 1
    }

    /// `n` independent draws from the mixture.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        let chol = self.factors()?;
        Ok((0..n)
            .map(|_| {
                let c = self.pick(rng);
                self.draw_from(c, &chol[c], rng)
            })
            .collect())
    }
}

/// How HawkesGMM assigns mixture components to events.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkCoupling {
    /// Each mixture component is a self-exciting Hawkes dimension with base
    /// rate `mu * weight`; an event's location comes from its dimension's
    /// Gaussian.
    #[default]
    Multivariate,
    /// Times from a univariate Hawkes process, locations drawn i.i.d.
    Independent,
}

/// Hawkes times with Gaussian-mixture locations.
pub fn simulate_hawkes_gmm<R: Rng + ?Sized>(
    hawkes: &HawkesParams,
    spatial: &GmmSpatialParams,
    coupling: MarkCoupling,
    rng: &mut R,
) -> Result<Vec<Event>> {
    spatial.validate()?;
    let chol = spatial.factors()?;
    match coupling {
        MarkCoupling::Multivariate => {
            let weights: Vec<f64> = spatial.components.iter().map(|c| c.weight).collect();
            let marked = simulate_hawkes_components(hawkes, &weights, None, rng)?;
            Ok(marked
                .into_iter()
                .map(|(t, c)| Event::continuous(t, spatial.draw_from(c, &chol[c], rng)))
                .collect())
        }
        MarkCoupling::Independent => {
            let times = simulate_hawkes(hawkes, rng)?;
            Ok(times
                .into_iter()
                .map(|t| {
                    let c = spatial.pick(rng);
                    Event::continuous(t, spatial.draw_from(c, &chol[c], rng))
                })
                .collect())
        }
    }
}

/// Sizes of a generated dataset. Every sequence is observed on `window`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetShape {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub window: (f64, f64),
}

impl Default for DatasetShape {
    fn default() -> Self {
        Self {
            n_train: 1000,
            n_val: 100,
            n_test: 100,
            window: (0.0, 15.0),
        }
    }
}

impl DatasetShape {
    fn total(&self) -> usize {
        self.n_train + self.n_val + self.n_test
    }

    fn horizon(&self) -> Result<f64> {
        let (a, b) = self.window;
        if !(b > a && a >= 0.0 && b.is_finite()) {
            return Err(Error::invalid(format!("bad window {:?}", self.window)));
        }
        Ok(b - a)
    }
}

/// Temporal component of a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "process", rename_all = "snake_case")]
pub enum TemporalProcess {
    Poisson { rate: f64 },
    Hawkes(HawkesParams),
    SelfCorrecting { mu: f64, alpha: f64 },
}

impl TemporalProcess {
    fn simulate<R: Rng + ?Sized>(&self, horizon: f64, rng: &mut R) -> Result<Vec<f64>> {
        match self {
            TemporalProcess::Poisson { rate } => simulate_poisson(*rate, horizon, rng),
            TemporalProcess::Hawkes(p) => simulate_hawkes(&HawkesParams { horizon, ..p.clone() }, rng),
            TemporalProcess::SelfCorrecting { mu, alpha } => simulate_self_correcting(*mu, *alpha, horizon, rng),
        }
    }
}

const TIME_STREAM: u64 = 1;
const SPACE_STREAM: u64 = 2;
const MAX_EMPTY_DRAWS: u64 = 1000;

/// Draws sequences until `shape.total()` nonempty ones exist. `draw` gets
/// a time stream and a space stream for each attempt.
fn build_sequences(
    shape: &DatasetShape,
    seed: u64,
    space: &SpaceSpec,
    mut draw: impl FnMut(&mut SimRng, &mut SimRng) -> Result<Vec<Event>>,
) -> Result<Vec<EventSequence>> {
    let mut out = Vec::with_capacity(shape.total());
    let mut attempt = 0u64;
    while out.len() < shape.total() {
        if attempt >= shape.total() as u64 + MAX_EMPTY_DRAWS {
            return Err(Error::invalid("generator keeps producing empty sequences"));
        }
        let mut time_rng = derived_rng(seed, TIME_STREAM, attempt);
        let mut space_rng = derived_rng(seed, SPACE_STREAM, attempt);
        attempt += 1;
        let mut events = draw(&mut time_rng, &mut space_rng)?;
        if events.is_empty() {
            continue;
        }
        for e in &mut events {
            e.t += shape.window.0;
        }
        out.push(EventSequence::new(
            format!("{}", out.len()),
            shape.window.0,
            shape.window.1,
            events,
            space,
        )?);
    }
    Ok(out)
}

/// Times from `process`, locations drawn independently from `spatial` on a
/// separate random stream.
pub fn simulate_dataset(
    process: &TemporalProcess,
    spatial: &GmmSpatialParams,
    shape: &DatasetShape,
    seed: u64,
) -> Result<Dataset> {
    spatial.validate()?;
    let horizon = shape.horizon()?;
    let space = SpaceSpec::Continuous { dim: spatial.dim() };
    let seqs = build_sequences(shape, seed, &space, |trng, srng| {
        let times = process.simulate(horizon, trng)?;
        let locs = spatial.sample(times.len(), srng)?;
        Ok(times.into_iter().zip(locs).map(|(t, s)| Event::continuous(t, s)).collect())
    })?;
    Dataset::from_split(space, seqs, shape.n_train, shape.n_val)
}

/// Hawkes temporal marginal and an independent correlated bivariate
/// Gaussian spatial marginal.
pub fn simulate_independent(shape: &DatasetShape, seed: u64) -> Result<Dataset> {
    let horizon = shape.horizon()?;
    simulate_dataset(
        &TemporalProcess::Hawkes(HawkesParams::synthetic_independent(horizon)),
        &GmmSpatialParams::synthetic_independent(),
        shape,
        seed,
    )
}

/// Default HawkesGMM temporal parameters: strongly clustered but stable.
pub fn hawkes_gmm_default_hawkes(horizon: f64) -> HawkesParams {
    HawkesParams::new(0.3, vec![(1.6, 2.0)], horizon)
}

pub fn simulate_hawkes_gmm_dataset(
    hawkes: &HawkesParams,
    spatial: &GmmSpatialParams,
    coupling: MarkCoupling,
    shape: &DatasetShape,
    seed: u64,
) -> Result<Dataset> {
    spatial.validate()?;
    let horizon = shape.horizon()?;
    let params = HawkesParams {
        horizon,
        ..hawkes.clone()
    };
    let space = SpaceSpec::Continuous { dim: spatial.dim() };
    let seqs = build_sequences(shape, seed, &space, |trng, _| {
        simulate_hawkes_gmm(&params, spatial, coupling, trng)
    })?;
    Dataset::from_split(space, seqs, shape.n_train, shape.n_val)
}

/// Poisson times whose locations cycle `0, 1, ..., locations - 1, 0, ...`.
pub fn simulate_location_cycle(locations: usize, rate: f64, shape: &DatasetShape, seed: u64) -> Result<Dataset> {
    let horizon = shape.horizon()?;
    let space = SpaceSpec::Discrete { locations };
    space.validate()?;
    let seqs = build_sequences(shape, seed, &space, |trng, _| {
        let times = simulate_poisson(rate, horizon, trng)?;
        Ok(times
            .into_iter()
            .enumerate()
            .map(|(i, t)| Event::discrete(t, i % locations))
            .collect())
    })?;
    Dataset::from_split(space, seqs, shape.n_train, shape.n_val)
}
