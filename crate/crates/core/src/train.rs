//! Noise-prediction training, model selection and checkpoints.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::denoiser::{forward_graph, StepTable};
use crate::diffcore::{Axis, Graph, Tensor, Var};
use crate::diffusion::{sequence_targets, standard_normal, vlb_nll, ScheduleConfig, Targets};
use crate::error::{Error, Result};
use crate::events::{Dataset, EventSequence, NormalizationStats, SpaceSpec};
use crate::model::{Bound, Model, ModelConfig, ParamId};
use crate::scalar::Scalar;
use crate::simulate::{derived_rng, SimRng};

pub const CHECKPOINT_VERSION: u32 = 1;

const TRAIN_STREAM: u64 = 101;
const VALIDATION_STREAM: u64 = 102;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Events per optimizer step.
    pub batch_size: usize,
    pub epochs: usize,
    pub embed_dim: usize,
    pub branch_layers: usize,
    pub schedule: ScheduleConfig,
    pub seed: u64,
    pub validation_every: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Independent `(k, eps)` draws per event per epoch.
    pub draws_per_event: usize,
    /// Forward draws per step term of the validation bound.
    pub validation_draws: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            batch_size: 64,
            epochs: 100,
            embed_dim: 64,
            branch_layers: 3,
            schedule: ScheduleConfig::default(),
            seed: 0,
            validation_every: 10,
            clip_norm: Some(10.0),
            draws_per_event: 1,
            validation_draws: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be >= 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.validation_every == 0 || self.draws_per_event == 0 || self.validation_draws == 0 {
            return Err(Error::invalid("batch size, epochs, validation cadence and draw counts must be positive"));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::invalid(format!("clip norm must be positive, got {c}")));
            }
        }
        Ok(())
    }

    pub fn model_config(&self, space: SpaceSpec) -> ModelConfig {
        ModelConfig {
            space,
            embed_dim: self.embed_dim,
            branch_layers: self.branch_layers,
            schedule: self.schedule,
        }
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<T: Scalar>(lr: f64, params: &[Tensor<T>]) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step<T: Scalar>(&mut self, params: &mut [Tensor<T>], grads: &[Vec<f64>]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g).enumerate() {
                let m = &mut self.m[i][j];
                let v = &mut self.v[i][j];
                *m = self.beta1 * *m + (1.0 - self.beta1) * gj;
                *v = self.beta2 * *v + (1.0 - self.beta2) * gj * gj;
                let update = self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
                *w = *w - T::of(update);
            }
        }
    }
}

/// Noisy inputs and noise targets of one training pass over a sequence.
#[derive(Clone, Debug)]
pub struct LossInputs<T> {
    pub targets: Targets,
    pub ks: Vec<usize>,
    /// `L x (1 + d)`: temporal noise then spatial noise.
    pub eps: Tensor<T>,
    pub s_k: Tensor<T>,
    pub tau_k: Tensor<T>,
    pub e_k: Tensor<T>,
}

impl<T: Scalar> LossInputs<T> {
    pub fn new(model: &Model<T>, steps: &StepTable, targets: Targets, ks: Vec<usize>, eps_t: &[f64], eps_s: &[f64]) -> Result<Self> {
        let l = targets.len();
        let d = model.config.space_dim();
        if ks.len() != l || eps_t.len() != l || eps_s.len() != l * d {
            return Err(Error::shape("loss", format!("{l} events need {l} steps and {} noise values", l * (1 + d))));
        }
        let sched = &model.schedule;
        let mut tau_k = Vec::with_capacity(l);
        let mut s_k = Vec::with_capacity(l * d);
        let mut eps = Vec::with_capacity(l * (1 + d));
        for r in 0..l {
            let k = ks[r];
            tau_k.extend(sched.q_sample(&targets.tau[r..=r], k, &eps_t[r..=r])?);
            s_k.extend(sched.q_sample(&targets.space[r * d..(r + 1) * d], k, &eps_s[r * d..(r + 1) * d])?);
            eps.push(eps_t[r]);
            eps.extend_from_slice(&eps_s[r * d..(r + 1) * d]);
        }
        let to_t = |v: Vec<f64>| v.into_iter().map(T::of).collect::<Vec<T>>();
        Ok(Self {
            e_k: steps.matrix(&ks),
            ks,
            eps: Tensor::matrix(l, 1 + d, to_t(eps))?,
            s_k: Tensor::matrix(l, d, to_t(s_k))?,
            tau_k: Tensor::matrix(l, 1, to_t(tau_k))?,
            targets,
        })
    }

    /// Uniform steps and standard-normal noise for every event of `seq`.
    pub fn draw<R: Rng + ?Sized>(model: &Model<T>, steps: &StepTable, seq: &EventSequence, rng: &mut R) -> Result<Self> {
        let targets = sequence_targets(model, seq)?;
        let l = targets.len();
        let d = model.config.space_dim();
        let ks = (0..l).map(|_| rng.random_range(1..=model.schedule.steps())).collect();
        let eps_t = standard_normal(l, rng);
        let eps_s = standard_normal(l * d, rng);
        Self::new(model, steps, targets, ks, &eps_t, &eps_s)
    }
}

/// Mean squared error between the true noise and the prediction over all
/// temporal and spatial coordinates.
pub fn loss_graph<T: Scalar>(g: &mut Graph<T>, model: &Model<T>, bound: &Bound, inputs: &LossInputs<T>) -> Result<Var> {
    let l = inputs.targets.len();
    let fwd = forward_graph(
        g,
        model,
        bound,
        &inputs.targets.input.prefix(l - 1),
        inputs.s_k.clone(),
        inputs.tau_k.clone(),
        inputs.e_k.clone(),
    )?;
    let pred = g.concat(&[fwd.out.eps_t, fwd.out.eps_s], Axis::Cols)?;
    let target = g.constant(inputs.eps.clone());
    g.mse(pred, target)
}

/// Loss value without gradients.
pub fn loss_step<T: Scalar>(model: &Model<T>, inputs: &LossInputs<T>) -> Result<f64> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g, false);
    let loss = loss_graph(&mut g, model, &bound, inputs)?;
    Ok(g.value(loss).item().f64())
}

/// Loss and its gradient for every parameter tensor.
pub fn loss_and_grad<T: Scalar>(model: &Model<T>, inputs: &LossInputs<T>) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g, true);
    let loss = loss_graph(&mut g, model, &bound, inputs)?;
    g.backward(loss)?;
    let grads = bound
        .vars()
        .iter()
        .map(|&v| g.grad(v).map_or_else(|| vec![0.0; g.value(v).numel()], |gr| gr.iter().map(|x| x.f64()).collect()))
        .collect();
    Ok((g.value(loss).item().f64(), grads))
}

/// Worst disagreement between backprop and central differences over every
/// parameter coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGradCheck {
    pub max_relative_error: f64,
    /// `name[index]` of the worst coordinate.
    pub worst: String,
    pub coordinates: usize,
}

/// Compares [`loss_and_grad`] with central differences of half-width `step`.
///
/// The error at each coordinate is `|a - n| / max(|a|, |n|, floor)`; the
/// floor keeps gradients at rounding-noise level from dominating. Tensors
/// listed in `skip` are not perturbed.
pub fn check_model_gradient<T: Scalar>(
    model: &Model<T>,
    inputs: &LossInputs<T>,
    step: f64,
    floor: f64,
    skip: &[ParamId],
) -> Result<ModelGradCheck> {
    if !(step > 0.0 && floor > 0.0) {
        return Err(Error::invalid("gradient check step and floor must be positive"));
    }
    let (_, grads) = loss_and_grad(model, inputs)?;
    let skip: Vec<usize> = skip.iter().map(|id| id.index()).collect();
    let mut report = ModelGradCheck {
        max_relative_error: 0.0,
        worst: String::new(),
        coordinates: 0,
    };
    let mut probe = model.clone();
    for p in (0..model.params().len()).filter(|p| !skip.contains(p)) {
        for (i, &analytic) in grads[p].iter().enumerate() {
            let orig = model.params()[p].data()[i];
            probe.params_mut()[p].data_mut()[i] = orig + T::from_f64(step).unwrap();
            let plus = loss_step(&probe, inputs)?;
            probe.params_mut()[p].data_mut()[i] = orig - T::from_f64(step).unwrap();
            let minus = loss_step(&probe, inputs)?;
            probe.params_mut()[p].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
            report.coordinates += 1;
            if err > report.max_relative_error || !err.is_finite() {
                report.max_relative_error = if err.is_finite() { err } else { f64::INFINITY };
                report.worst = format!("{}[{i}]", model.names()[p]);
            }
        }
    }
    Ok(report)
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_nll_t: f64,
    pub val_nll_s: f64,
}

pub fn write_log_csv<W: Write>(rows: &[LogRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(crate::diffusion::csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub epoch: usize,
    pub nll_t: f64,
    pub nll_s: f64,
}

impl ValidationRecord {
    pub fn total(&self) -> f64 {
        self.nll_t + self.nll_s
    }
}

pub struct TrainOutcome<T> {
    /// Parameters with the best validation bound.
    pub model: Model<T>,
    pub log: Vec<LogRow>,
    pub best: Option<ValidationRecord>,
    /// Mean training loss of every epoch.
    pub epoch_losses: Vec<f64>,
}

/// Mean temporal and spatial bound over every event of `sequences`.
pub fn mean_vlb<T: Scalar, R: Rng + ?Sized>(model: &Model<T>, sequences: &[EventSequence], draws: usize, rng: &mut R) -> Result<(f64, f64)> {
    let (mut t, mut s, mut n) = (0.0, 0.0, 0usize);
    for seq in sequences {
        for e in vlb_nll(model, seq, draws, rng)? {
            t += e.temporal;
            s += e.spatial;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::invalid("no events to evaluate"));
    }
    Ok((t / n as f64, s / n as f64))
}

fn validation_rng(seed: u64) -> SimRng {
    derived_rng(seed, VALIDATION_STREAM, 0)
}

fn diverged<T: Scalar>(model: &Model<T>, step: usize, k: usize, what: String) -> Error {
    let norms: Vec<String> = model
        .named()
        .map(|(n, p)| format!("{n}={:.3e}", p.norm().f64()))
        .collect();
    Error::Diverged {
        step,
        k,
        detail: format!("{what}; parameter norms: {}", norms.join(", ")),
    }
}

/// Trains on `train`, selecting by the validation bound on `val`. Test
/// data is never an input.
pub fn train_splits<T: Scalar>(
    space: &SpaceSpec,
    stats: &NormalizationStats,
    train: &[EventSequence],
    val: &[EventSequence],
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    let mut model = Model::<T>::new(config.model_config(*space), stats.clone(), config.seed)?;
    let steps = StepTable::new(model.schedule.steps(), model.config.embed_dim)?;
    let mut adam = Adam::new(config.learning_rate, model.params());
    let mut rng = derived_rng(config.seed, TRAIN_STREAM, 0);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::new();
    let mut best: Option<(ValidationRecord, Vec<Tensor<T>>)> = None;
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut step = 0usize;
    let mut acc: Vec<Vec<f64>> = model.params().iter().map(|p| vec![0.0; p.numel()]).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut loss_events) = (0.0, 0usize);
        let mut batch_events = 0usize;
        let last = order.len() * config.draws_per_event - 1;
        for (pos, &idx) in order.iter().cycle().take(order.len() * config.draws_per_event).enumerate() {
            let inputs = LossInputs::draw(&model, &steps, &train[idx], &mut rng)?;
            let batch_k = inputs.ks[0];
            let l = inputs.targets.len();
            let (loss, grads) = match loss_and_grad(&model, &inputs) {
                Ok(v) => v,
                Err(Error::NonFinite { op }) => return Err(diverged(&model, step, batch_k, format!("non-finite value in {op}"))),
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(diverged(&model, step, batch_k, format!("loss {loss}")));
            }
            let w = l as f64;
            for (a, g) in acc.iter_mut().zip(&grads) {
                for (x, y) in a.iter_mut().zip(g) {
                    *x += w * y;
                }
            }
            loss_sum += w * loss;
            loss_events += l;
            batch_events += l;
            if batch_events >= config.batch_size || pos == last {
                let scale = 1.0 / batch_events as f64;
                let mut norm2 = 0.0;
                for a in acc.iter_mut() {
                    for x in a.iter_mut() {
                        *x *= scale;
                        norm2 += *x * *x;
                    }
                }
                let norm = norm2.sqrt();
                if !norm.is_finite() {
                    return Err(diverged(&model, step, batch_k, format!("gradient norm {norm}")));
                }
                if let Some(c) = config.clip_norm {
                    if norm > c {
                        let f = c / norm;
                        acc.iter_mut().flatten().for_each(|x| *x *= f);
                    }
                }
                adam.step(model.params_mut(), &acc);
                if model.params().iter().any(|p| !p.is_finite()) {
                    return Err(diverged(&model, step, batch_k, "non-finite parameters after update".into()));
                }
                acc.iter_mut().flatten().for_each(|x| *x = 0.0);
                batch_events = 0;
                step += 1;
            }
        }
        let train_loss = loss_sum / loss_events as f64;
        epoch_losses.push(train_loss);
        log::debug!("epoch {epoch}: loss {train_loss:.5}");
        if !val.is_empty() && (epoch % config.validation_every == 0 || epoch == config.epochs) {
            let (nll_t, nll_s) = mean_vlb(&model, val, config.validation_draws, &mut validation_rng(config.seed))?;
            log::info!("epoch {epoch}: loss {train_loss:.5}, val nll_t {nll_t:.4}, nll_s {nll_s:.4}");
            log.push(LogRow {
                epoch,
                train_loss,
                val_nll_t: nll_t,
                val_nll_s: nll_s,
            });
            let rec = ValidationRecord { epoch, nll_t, nll_s };
            if best.as_ref().is_none_or(|(b, _)| rec.total() < b.total()) {
                best = Some((rec, model.params().to_vec()));
            }
        }
    }
    let best_record = best.as_ref().map(|(r, _)| *r);
    if let Some((_, params)) = best {
        model.params_mut().clone_from_slice(&params);
    }
    Ok(TrainOutcome {
        model,
        log,
        best: best_record,
        epoch_losses,
    })
}

pub fn train<T: Scalar>(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome<T>> {
    train_splits(&dataset.space, &dataset.stats, &dataset.train, &dataset.val, config)
}

/// Stored tensor of a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Versioned JSON container for a trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model: ModelConfig,
    pub stats: NormalizationStats,
    pub train: TrainConfig,
    pub validation: Option<ValidationRecord>,
    pub params: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new<T: Scalar>(model: &Model<T>, train: &TrainConfig, validation: Option<ValidationRecord>) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            model: model.config.clone(),
            stats: model.stats.clone(),
            train: train.clone(),
            validation,
            params: model
                .named()
                .map(|(name, t)| NamedTensor {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    data: t.data().iter().map(|v| v.f64()).collect(),
                })
                .collect(),
        }
    }

    pub fn to_model<T: Scalar>(&self) -> Result<Model<T>> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let named = self
            .params
            .iter()
            .map(|p| Ok((p.name.clone(), Tensor::new(p.shape.clone(), p.data.iter().map(|&v| T::of(v)).collect())?)))
            .collect::<Result<Vec<_>>>()?;
        Model::from_named(self.model.clone(), self.stats.clone(), named)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(&mut f, self)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == CHECKPOINT_VERSION as u64 => Ok(serde_json::from_value(value)?),
            Some(v) => Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {v} (expected {CHECKPOINT_VERSION})"
            ))),
            None => Err(Error::Checkpoint("missing version field".into())),
        }
    }
}

/// Seeded generator for evaluation and sampling streams.
pub fn eval_rng(seed: u64, stream: u64) -> SimRng {
    SimRng::seed_from_u64(seed ^ stream.wrapping_mul(0x2545_F491_4F6C_DD1D))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{Event, SpaceSpec};

    fn seq(id: usize, events: Vec<Event>, end: f64) -> EventSequence {
        EventSequence::new(id.to_string(), 0.0, end, events, &SpaceSpec::Continuous { dim: 2 }).unwrap()
    }

    fn toy() -> Dataset {
        let mut seqs = Vec::new();
        for i in 0..6 {
            let ev = (0..4 + i % 3)
                .map(|j| Event::continuous(0.7 * (j + 1) as f64 + 0.1 * i as f64, vec![j as f64 * 0.3, -(i as f64) * 0.2]))
                .collect();
            seqs.push(seq(i, ev, 10.0));
        }
        Dataset::from_split(SpaceSpec::Continuous { dim: 2 }, seqs, 4, 1).unwrap()
    }

    fn small() -> TrainConfig {
        TrainConfig {
            embed_dim: 8,
            schedule: ScheduleConfig {
                steps: 10,
                beta_start: 1e-3,
                beta_end: 0.2,
            },
            epochs: 3,
            validation_every: 1,
            batch_size: 8,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn loss_matches_definition() {
        let d = toy();
        let m: Model<f64> = Model::new(small().model_config(d.space), d.stats.clone(), 1).unwrap();
        let steps = StepTable::new(10, 8).unwrap();
        let inputs = LossInputs::draw(&m, &steps, &d.train[0], &mut SimRng::seed_from_u64(0)).unwrap();
        let loss = loss_step(&m, &inputs).unwrap();
        assert!(loss >= 0.0);
        // Zero network: the loss is mean(eps^2).
        let mut z = m.clone();
        for p in z.params_mut() {
            *p = Tensor::zeros(p.shape());
        }
        let expected = inputs.eps.data().iter().map(|e| e * e).sum::<f64>() / inputs.eps.numel() as f64;
        assert!((loss_step(&z, &inputs).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        // Heads fixed to zero and eps drawn as zero give a zero residual.
        let d = toy();
        let mut m: Model<f64> = Model::new(small().model_config(d.space), d.stats.clone(), 1).unwrap();
        for id in [m.denoiser.head_s, m.denoiser.head_s_b, m.denoiser.head_t, m.denoiser.head_t_b] {
            let p = m.param_mut(id);
            *p = Tensor::zeros(p.shape());
        }
        let steps = StepTable::new(10, 8).unwrap();
        let targets = sequence_targets(&m, &d.train[0]).unwrap();
        let l = targets.len();
        let inputs = LossInputs::new(&m, &steps, targets, vec![3; l], &vec![0.0; l], &vec![0.0; 2 * l]).unwrap();
        assert_eq!(loss_step(&m, &inputs).unwrap(), 0.0);
    }

    #[test]
    fn training_is_reproducible() {
        let d = toy();
        let a: TrainOutcome<f64> = train(&d, &small()).unwrap();
        let b: TrainOutcome<f64> = train(&d, &small()).unwrap();
        assert_eq!(a.epoch_losses, b.epoch_losses);
        assert_eq!(a.log, b.log);
        assert_eq!(a.model.params(), b.model.params());
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let d = toy();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..small()
        };
        let out: TrainOutcome<f64> = train(&d, &cfg).unwrap();
        let init: Model<f64> = Model::new(cfg.model_config(d.space), d.stats.clone(), cfg.seed).unwrap();
        assert_eq!(out.model.params(), init.params());
    }

    #[test]
    fn test_split_is_never_read() {
        let d = toy();
        let mut other = d.clone();
        other.test = vec![seq(99, vec![Event::continuous(1.0, vec![1e6, -1e6])], 2.0)];
        let a: TrainOutcome<f64> = train(&d, &small()).unwrap();
        let b: TrainOutcome<f64> = train(&other, &small()).unwrap();
        assert_eq!(a.model.params(), b.model.params());
    }

    fn gradient_mass(m: &Model<f64>, d: &Dataset) -> Vec<f64> {
        let steps = StepTable::new(10, 8).unwrap();
        let mut rng = SimRng::seed_from_u64(1);
        let mut total = vec![0.0; m.params().len()];
        for s in &d.train {
            let inputs = LossInputs::draw(m, &steps, s, &mut rng).unwrap();
            let (_, grads) = loss_and_grad(m, &inputs).unwrap();
            for (t, g) in total.iter_mut().zip(&grads) {
                *t += g.iter().map(|x| x.abs()).sum::<f64>();
            }
        }
        total
    }

    #[test]
    fn no_dead_parameters() {
        let d = toy();
        let mut m: Model<f64> = Model::new(small().model_config(d.space), d.stats.clone(), 4).unwrap();
        // zero co-attention weights isolate the entangled stream at init
        for (name, t) in m.names().iter().zip(&gradient_mass(&m, &d)) {
            assert_eq!(*t > 0.0, !name.starts_with("encoder.st."), "{name}");
        }
        let (sa_h, ta_h) = (m.denoiser.sa_h, m.denoiser.ta_h);
        for id in [sa_h, ta_h] {
            for (i, x) in m.param_mut(id).data_mut().iter_mut().enumerate() {
                *x = 0.01 * ((i % 7) as f64 - 3.0);
            }
        }
        for (name, t) in m.names().iter().zip(&gradient_mass(&m, &d)) {
            assert!(*t > 0.0, "{name} receives no gradient");
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let d = toy();
        let cfg = small();
        let out: TrainOutcome<f64> = train(&d, &cfg).unwrap();
        let ck = Checkpoint::new(&out.model, &cfg, out.best);
        let dir = std::env::temp_dir().join(format!("dstpp-ck-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        let m: Model<f64> = back.to_model().unwrap();
        assert_eq!(m.params(), out.model.params());
        let best = out.best.unwrap();
        let (t, s) = mean_vlb(&m, &d.val, cfg.validation_draws, &mut validation_rng(cfg.seed)).unwrap();
        assert_eq!((t, s), (best.nll_t, best.nll_s));

        let mut bumped = serde_json::to_value(&ck).unwrap();
        bumped["version"] = serde_json::json!(99);
        std::fs::write(&path, bumped.to_string()).unwrap();
        let err = Checkpoint::load(&path).unwrap_err();
        assert!(err.to_string().contains("version 99"), "{err}");
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn best_validation_is_selected() {
        let d = toy();
        let out: TrainOutcome<f64> = train(&d, &small()).unwrap();
        let best = out.best.unwrap();
        assert!(out.log.iter().all(|r| r.val_nll_t + r.val_nll_s >= best.total()));
        assert_eq!(out.log.len(), 3);
    }

    #[test]
    fn log_csv_header() {
        let rows = vec![LogRow {
            epoch: 10,
            train_loss: 0.5,
            val_nll_t: 1.0,
            val_nll_s: 2.0,
        }];
        let mut buf = Vec::new();
        write_log_csv(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epoch,train_loss,val_nll_t,val_nll_s\n10,0.5,1.0,2.0\n");
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { batch_size: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: -1.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { clip_norm: Some(0.0), ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
