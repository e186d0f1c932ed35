//! Next-event prediction and likelihood evaluation.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::diffusion::{sample_rows, sequence_targets, vlb_rows, SampledEvent};
use crate::encoder::EncoderInput;
use crate::error::{Error, Result};
use crate::events::{Event, EventSequence, Location};
use crate::model::Model;
use crate::scalar::Scalar;
use crate::simulate::{derived_rng, SimRng};

pub const PREDICT_STREAM: u64 = 201;
pub const NLL_STREAM: u64 = 202;

/// Root mean squared error.
pub fn rmse(truth: &[f64], pred: &[f64]) -> Result<f64> {
    if truth.len() != pred.len() || truth.is_empty() {
        return Err(Error::shape("rmse", format!("{} truths vs {} predictions", truth.len(), pred.len())));
    }
    let ss: f64 = truth.iter().zip(pred).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((ss / truth.len() as f64).sqrt())
}

/// Mean Euclidean distance between paired points.
pub fn euclid(truth: &[Vec<f64>], pred: &[Vec<f64>]) -> Result<f64> {
    if truth.len() != pred.len() || truth.is_empty() {
        return Err(Error::shape("euclid", format!("{} truths vs {} predictions", truth.len(), pred.len())));
    }
    let mut total = 0.0;
    for (a, b) in truth.iter().zip(pred) {
        if a.len() != b.len() {
            return Err(Error::shape("euclid", format!("dimension {} vs {}", a.len(), b.len())));
        }
        total += a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    }
    Ok(total / truth.len() as f64)
}

/// Fraction of exact matches.
pub fn accuracy(truth: &[usize], pred: &[usize]) -> Result<f64> {
    if truth.len() != pred.len() || truth.is_empty() {
        return Err(Error::shape("accuracy", format!("{} truths vs {} predictions", truth.len(), pred.len())));
    }
    Ok(truth.iter().zip(pred).filter(|(a, b)| a == b).count() as f64 / truth.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Draws averaged (or voted) per prediction.
    pub n_samples: usize,
    /// Forward draws per step term of the bound.
    pub vlb_draws: usize,
    pub seed: u64,
    /// Skip the sampling-based prediction metrics.
    pub nll_only: bool,
    /// Condition each prediction on the model's own earlier predictions
    /// instead of the true history.
    pub rollout: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n_samples: 30,
            vlb_draws: 1,
            seed: 0,
            nll_only: false,
            rollout: false,
        }
    }
}

/// Point prediction of the next event.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub t: f64,
    pub location: Location,
}

/// Mean interval and mean coordinates, or the majority location with
/// ties to the smallest id.
fn aggregate(samples: &[SampledEvent]) -> Result<(f64, Location)> {
    let n = samples.len() as f64;
    let tau = samples.iter().map(|s| s.tau).sum::<f64>() / n;
    let location = match &samples[0].location {
        Location::Coords(c) => {
            let mut mean = vec![0.0; c.len()];
            for s in samples {
                let Location::Coords(c) = &s.location else {
                    return Err(Error::invalid("mixed location kinds"));
                };
                for (m, v) in mean.iter_mut().zip(c) {
                    *m += v / n;
                }
            }
            Location::Coords(mean)
        }
        Location::Id(_) => {
            let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
            for s in samples {
                if let Location::Id(i) = s.location {
                    *votes.entry(i).or_default() += 1;
                }
            }
            let best = votes.iter().map(|(&id, &c)| (c, std::cmp::Reverse(id))).max().expect("nonempty").1 .0;
            Location::Id(best)
        }
    };
    Ok((tau, location))
}

/// Predicts the event after `history` from `n_samples` draws.
pub fn predict_next<T: Scalar>(
    model: &Model<T>,
    history: &[Event],
    window_start: f64,
    n_samples: usize,
    rng: &mut SimRng,
) -> Result<Prediction> {
    let samples = crate::diffusion::sample_event(model, history, window_start, n_samples, rng)?;
    let (tau, location) = aggregate(&samples)?;
    let last = history.last().map_or(window_start, |e| e.t);
    Ok(Prediction { t: last + tau, location })
}

/// Teacher-forced predictions for every event of `seq`.
pub fn predict_sequence<T: Scalar>(model: &Model<T>, seq: &EventSequence, n_samples: usize, rng: &mut SimRng) -> Result<Vec<Prediction>> {
    if n_samples == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let input = EncoderInput::from_events(&seq.events, seq.window_start, &model.stats, &model.config.space)?;
    let l = seq.len();
    let h = model.encode(&input.prefix(l - 1))?;
    let positions: Vec<usize> = (0..l).collect();
    let h = h.repeat_rows(&positions, n_samples);
    let (samples, _) = sample_rows(model, &h, rng, &[])?;
    samples
        .chunks(n_samples)
        .enumerate()
        .map(|(i, chunk)| {
            let (tau, location) = aggregate(chunk)?;
            let prev = if i == 0 { seq.window_start } else { seq.events[i - 1].t };
            Ok(Prediction { t: prev + tau, location })
        })
        .collect()
}

/// Autoregressive predictions for every event of `seq`: each predicted
/// event joins the history of the next prediction.
pub fn rollout_sequence<T: Scalar>(model: &Model<T>, seq: &EventSequence, n_samples: usize, rng: &mut SimRng) -> Result<Vec<Prediction>> {
    let mut history: Vec<Event> = Vec::with_capacity(seq.len());
    let mut out = Vec::with_capacity(seq.len());
    for _ in 0..seq.len() {
        let p = predict_next(model, &history, seq.window_start, n_samples, rng)?;
        history.push(Event {
            t: p.t,
            location: p.location.clone(),
        });
        out.push(p);
    }
    Ok(out)
}

/// Evaluation results of one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub nll_temporal: f64,
    pub nll_spatial: f64,
    pub rmse_time: Option<f64>,
    pub euclid_space: Option<f64>,
    pub accuracy: Option<f64>,
    pub n_events: usize,
}

/// Stable per-sequence stream, so results do not depend on split order.
pub fn sequence_rng(seed: u64, stream: u64, id: &str) -> SimRng {
    // FNV-1a
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in id.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    derived_rng(seed, stream, h)
}

#[derive(Default)]
struct SequenceResult {
    nll_t: Vec<f64>,
    nll_s: Vec<f64>,
    t_true: Vec<f64>,
    t_pred: Vec<f64>,
    s_true: Vec<Vec<f64>>,
    s_pred: Vec<Vec<f64>>,
    id_true: Vec<usize>,
    id_pred: Vec<usize>,
}

/// Bound NLL and teacher-forced prediction metrics over `sequences`.
pub fn evaluate<T: Scalar>(model: &Model<T>, sequences: &[EventSequence], config: &EvalConfig) -> Result<MetricsReport> {
    if sequences.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty split"));
    }
    let mut by_id: BTreeMap<(String, usize), SequenceResult> = BTreeMap::new();
    for (i, seq) in sequences.iter().enumerate() {
        let mut r = SequenceResult::default();
        let targets = sequence_targets(model, seq)?;
        let h = model.encode(&targets.input.prefix(seq.len() - 1))?;
        let mut rng = sequence_rng(config.seed, NLL_STREAM, &seq.id);
        for e in vlb_rows(model, &h, &targets.tau, &targets.space, config.vlb_draws, &mut rng)? {
            r.nll_t.push(e.temporal);
            r.nll_s.push(e.spatial);
        }
        if !config.nll_only {
            let mut rng = sequence_rng(config.seed, PREDICT_STREAM, &seq.id);
            let preds = if config.rollout {
                rollout_sequence(model, seq, config.n_samples, &mut rng)?
            } else {
                predict_sequence(model, seq, config.n_samples, &mut rng)?
            };
            for (p, e) in preds.into_iter().zip(&seq.events) {
                r.t_true.push(e.t);
                r.t_pred.push(p.t);
                match (&p.location, &e.location) {
                    (Location::Coords(a), Location::Coords(b)) => {
                        r.s_pred.push(a.clone());
                        r.s_true.push(b.clone());
                    }
                    (Location::Id(a), Location::Id(b)) => {
                        r.id_pred.push(*a);
                        r.id_true.push(*b);
                    }
                    _ => return Err(Error::invalid("prediction and truth have different location kinds")),
                }
            }
        }
        // Duplicate ids keep distinct entries.
        by_id.insert((seq.id.clone(), i), r);
    }
    let mut all = SequenceResult::default();
    for (_, r) in by_id {
        all.nll_t.extend(r.nll_t);
        all.nll_s.extend(r.nll_s);
        all.t_true.extend(r.t_true);
        all.t_pred.extend(r.t_pred);
        all.s_true.extend(r.s_true);
        all.s_pred.extend(r.s_pred);
        all.id_true.extend(r.id_true);
        all.id_pred.extend(r.id_pred);
    }
    let n = all.nll_t.len();
    Ok(MetricsReport {
        nll_temporal: all.nll_t.iter().sum::<f64>() / n as f64,
        nll_spatial: all.nll_s.iter().sum::<f64>() / n as f64,
        rmse_time: (!config.nll_only).then(|| rmse(&all.t_true, &all.t_pred)).transpose()?,
        euclid_space: (!all.s_true.is_empty()).then(|| euclid(&all.s_true, &all.s_pred)).transpose()?,
        accuracy: (!all.id_true.is_empty()).then(|| accuracy(&all.id_true, &all.id_pred)).transpose()?,
        n_events: n,
    })
}

/// One row of the results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsRow {
    pub dataset: String,
    pub split: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub nll_t: f64,
    pub nll_s: f64,
    pub rmse: Option<f64>,
    pub euclid: Option<f64>,
    pub accuracy: Option<f64>,
    pub seed: u64,
}

impl ResultsRow {
    pub fn new(dataset: &str, split: &str, k: usize, seed: u64, report: &MetricsReport) -> Self {
        Self {
            dataset: dataset.into(),
            split: split.into(),
            k,
            nll_t: report.nll_temporal,
            nll_s: report.nll_spatial,
            rmse: report.rmse_time,
            euclid: report.euclid_space,
            accuracy: report.accuracy,
            seed,
        }
    }
}

/// Appends `row`, writing the header when the output is empty.
pub fn write_results_row<W: Write>(row: &ResultsRow, out: W, header: bool) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(header).from_writer(out);
    w.serialize(row).map_err(crate::diffusion::csv_err)?;
    w.flush()?;
    Ok(())
}

/// Errors of predicting every interval by the training mean interval and
/// every location by the training mean location.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanBaseline {
    pub rmse_time: f64,
    pub euclid_space: Option<f64>,
}

pub fn mean_baseline(train: &[EventSequence], sequences: &[EventSequence]) -> Result<MeanBaseline> {
    let taus: Vec<f64> = train.iter().flat_map(|s| s.intervals()).collect();
    if taus.is_empty() {
        return Err(Error::invalid("empty training split"));
    }
    let mean_tau = taus.iter().sum::<f64>() / taus.len() as f64;
    let coords: Vec<&[f64]> = train.iter().flat_map(|s| s.events.iter().filter_map(|e| e.coords())).collect();
    let mean_loc = (!coords.is_empty()).then(|| {
        let d = coords[0].len();
        (0..d).map(|j| coords.iter().map(|c| c[j]).sum::<f64>() / coords.len() as f64).collect::<Vec<_>>()
    });
    let (mut t_true, mut t_pred, mut s_true, mut s_pred) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for seq in sequences {
        let mut prev = seq.window_start;
        for e in &seq.events {
            t_true.push(e.t);
            t_pred.push(prev + mean_tau);
            prev = e.t;
            if let (Some(c), Some(m)) = (e.coords(), &mean_loc) {
                s_true.push(c.to_vec());
                s_pred.push(m.clone());
            }
        }
    }
    Ok(MeanBaseline {
        rmse_time: rmse(&t_true, &t_pred)?,
        euclid_space: (!s_true.is_empty()).then(|| euclid(&s_true, &s_pred)).transpose()?,
    })
}

/// Maximum-likelihood exponential rate of the training intervals and the
/// mean per-event interval NLL it assigns to `sequences`.
pub fn poisson_interval_nll(train: &[EventSequence], sequences: &[EventSequence]) -> Result<(f64, f64)> {
    let taus: Vec<f64> = train.iter().flat_map(|s| s.intervals()).collect();
    let total: f64 = taus.iter().sum();
    if taus.is_empty() || !(total > 0.0) {
        return Err(Error::invalid("need positive training intervals"));
    }
    let rate = taus.len() as f64 / total;
    let eval: Vec<f64> = sequences.iter().flat_map(|s| s.intervals()).collect();
    if eval.is_empty() {
        return Err(Error::invalid("no events to score"));
    }
    let nll = eval.iter().map(|t| -rate.ln() + rate * t).sum::<f64>() / eval.len() as f64;
    Ok((rate, nll))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(rmse(&[1.0], &[3.0]).unwrap(), 2.0);
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn euclid_examples() {
        let a = vec![vec![1.0, 2.0]];
        assert_eq!(euclid(&a, &a).unwrap(), 0.0);
        assert_eq!(euclid(&[vec![0.0, 0.0]], &[vec![3.0, 4.0]]).unwrap(), 5.0);
        let t = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        let p = vec![vec![1.0, 0.0], vec![0.0, 3.0]];
        assert_eq!(euclid(&t, &p).unwrap(), 2.0);
        assert!(euclid(&t, &p[..1]).is_err());
        assert!(euclid(&[vec![0.0]], &[vec![0.0, 1.0]]).is_err());
    }

    #[test]
    fn euclid_translation_invariant() {
        let t = vec![vec![0.5, 1.0], vec![-2.0, 3.0]];
        let p = vec![vec![1.5, -1.0], vec![0.0, 0.0]];
        let shift = |v: &[Vec<f64>]| v.iter().map(|r| vec![r[0] + 10.0, r[1] - 4.0]).collect::<Vec<_>>();
        assert!((euclid(&t, &p).unwrap() - euclid(&shift(&t), &shift(&p)).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[1, 2], &[1, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 2], &[0, 0]).unwrap(), 0.0);
        assert_eq!(accuracy(&[1, 2, 3, 4], &[1, 2, 3, 0]).unwrap(), 0.75);
        assert!(accuracy(&[1], &[]).is_err());
    }

    #[test]
    fn majority_vote_breaks_ties_low() {
        let s = |id| SampledEvent {
            tau: 1.0,
            location: Location::Id(id),
        };
        assert_eq!(aggregate(&[s(3), s(1), s(3), s(1)]).unwrap().1, Location::Id(1));
        assert_eq!(aggregate(&[s(3), s(1), s(3)]).unwrap().1, Location::Id(3));
    }

    #[test]
    fn poisson_baseline_rate() {
        let sp = crate::events::SpaceSpec::Continuous { dim: 1 };
        let seq = EventSequence::new(
            "a",
            0.0,
            10.0,
            vec![Event::continuous(1.0, vec![0.0]), Event::continuous(4.0, vec![1.0])],
            &sp,
        )
        .unwrap();
        let (rate, nll) = poisson_interval_nll(std::slice::from_ref(&seq), std::slice::from_ref(&seq)).unwrap();
        assert_eq!(rate, 0.5);
        assert!((nll - (2f64.ln() + 1.0)).abs() < 1e-15);
        let b = mean_baseline(std::slice::from_ref(&seq), std::slice::from_ref(&seq)).unwrap();
        // Predictions 2 and 3 against truths 1 and 4.
        assert_eq!(b.rmse_time, 1.0);
        assert_eq!(b.euclid_space, Some(0.5));
    }
}
