//! Spatio-temporal self-attention encoder.
//!
//! Row `i` of each output is the history representation after events
//! `1..=i`; row 0 comes from a learned start token. The next event after
//! `i` observed events is conditioned on row `i`.

use crate::diffcore::{Axis, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::events::{Event, Location, NormalizationStats, SpaceSpec};
use crate::model::{Bound, Model, StreamParams};
use crate::scalar::Scalar;

/// Sinusoidal encoding: entry `i` is `cos(t / 10000^(i/M))` for even `i`
/// and `sin(t / 10000^(i/M))` for odd `i` (0-based).
pub fn positional_encode(t: f64, m: usize) -> Result<Vec<f64>> {
    if m == 0 || !m.is_multiple_of(2) {
        return Err(Error::invalid(format!("encoding width must be even and positive, got {m}")));
    }
    Ok((0..m)
        .map(|i| {
            let arg = t / 10000f64.powf(i as f64 / m as f64);
            if i % 2 == 0 {
                arg.cos()
            } else {
                arg.sin()
            }
        })
        .collect())
}

/// Encoder input in model units.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderInput {
    /// Absolute times since the window start, divided by the time scale.
    pub times: Vec<f64>,
    pub space: SpaceInput,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SpaceInput {
    /// Standardized coordinates, one row per event.
    Coords(Vec<Vec<f64>>),
    Ids(Vec<usize>),
}

impl EncoderInput {
    pub fn from_events(events: &[Event], window_start: f64, stats: &NormalizationStats, space: &SpaceSpec) -> Result<Self> {
        let times = events.iter().map(|e| (e.t - window_start) / stats.time_scale()).collect();
        let space = match *space {
            SpaceSpec::Continuous { dim } => SpaceInput::Coords(
                events
                    .iter()
                    .map(|e| match &e.location {
                        Location::Coords(c) if c.len() == dim => Ok(stats.normalize_coords(c)),
                        other => Err(Error::invalid(format!("expected {dim} coordinates, got {other:?}"))),
                    })
                    .collect::<Result<_>>()?,
            ),
            SpaceSpec::Discrete { locations } => SpaceInput::Ids(
                events
                    .iter()
                    .map(|e| match e.location {
                        Location::Id(id) if id < locations => Ok(id),
                        ref other => Err(Error::invalid(format!("expected a location id below {locations}, got {other:?}"))),
                    })
                    .collect::<Result<_>>()?,
            ),
        };
        Ok(Self { times, space })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// The first `n` events.
    pub fn prefix(&self, n: usize) -> Self {
        Self {
            times: self.times[..n].to_vec(),
            space: match &self.space {
                SpaceInput::Coords(c) => SpaceInput::Coords(c[..n].to_vec()),
                SpaceInput::Ids(i) => SpaceInput::Ids(i[..n].to_vec()),
            },
        }
    }
}

/// Graph handles of the three history streams, each `(L + 1) x M`.
#[derive(Clone, Copy, Debug)]
pub struct HiddenVars {
    pub h_st: Var,
    pub h_s: Var,
    pub h_t: Var,
    /// Causal attention weights of the st, s and t streams.
    pub attention: [Var; 3],
}

/// Evaluated history streams.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenRepresentation<T> {
    pub h_st: Tensor<T>,
    pub h_s: Tensor<T>,
    pub h_t: Tensor<T>,
    pub attention: [Tensor<T>; 3],
}

impl<T: Scalar> HiddenRepresentation<T> {
    pub fn positions(&self) -> usize {
        self.h_st.rows()
    }

    /// Each selected position's rows repeated `times` times, in order.
    pub fn repeat_rows(&self, positions: &[usize], times: usize) -> Self {
        let pick = |t: &Tensor<T>| {
            let cols = t.cols();
            let mut data = Vec::with_capacity(positions.len() * times * cols);
            for &p in positions {
                for _ in 0..times {
                    data.extend_from_slice(t.row_slice(p));
                }
            }
            Tensor::matrix(positions.len() * times, cols, data).expect("row selection")
        };
        Self {
            h_st: pick(&self.h_st),
            h_s: pick(&self.h_s),
            h_t: pick(&self.h_t),
            attention: self.attention.clone(),
        }
    }
}

/// Continuous coordinates times `W_e`, or row `id` of `W_e`.
pub fn embed_space<T: Scalar>(model: &Model<T>, location: &Location) -> Result<Vec<T>> {
    let w = model.param(model.encoder.w_e);
    match (location, &model.config.space) {
        (Location::Coords(c), SpaceSpec::Continuous { dim }) if c.len() == *dim => Ok((0..w.cols())
            .map(|j| c.iter().enumerate().map(|(i, &x)| T::of(x) * w.get(i, j)).sum())
            .collect()),
        (Location::Id(id), SpaceSpec::Discrete { locations }) if id < locations => Ok(w.row_slice(*id).to_vec()),
        (loc, space) => Err(Error::shape("embed_space", format!("{loc:?} does not match {space:?}"))),
    }
}

fn stream<T: Scalar>(g: &mut Graph<T>, bound: &Bound, p: &StreamParams, e: Option<Var>, m: usize) -> Result<(Var, Var)> {
    let x = match e {
        Some(e) => g.concat(&[bound.get(p.start), e], Axis::Rows)?,
        None => bound.get(p.start),
    };
    let q = g.matmul(x, bound.get(p.wq))?;
    let k = g.matmul(x, bound.get(p.wk))?;
    let v = g.matmul(x, bound.get(p.wv))?;
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let scores = g.scale(scores, T::of(1.0 / (m as f64).sqrt()))?;
    let attn = g.causal_softmax(scores)?;
    let z = g.matmul(attn, v)?;
    let r = g.add(x, z)?;
    let f = g.matmul(r, bound.get(p.w1))?;
    let f = g.add_row(f, bound.get(p.b1))?;
    let f = g.relu(f)?;
    let f = g.matmul(f, bound.get(p.w2))?;
    let h = g.add_row(f, bound.get(p.b2))?;
    Ok((h, attn))
}

/// Records the encoder on `g`.
pub fn encode_graph<T: Scalar>(g: &mut Graph<T>, model: &Model<T>, bound: &Bound, input: &EncoderInput) -> Result<HiddenVars> {
    let m = model.config.embed_dim;
    let n = input.len();
    if n == 0 {
        let (h_st, a_st) = stream(g, bound, &model.encoder.st, None, m)?;
        let (h_s, a_s) = stream(g, bound, &model.encoder.s, None, m)?;
        let (h_t, a_t) = stream(g, bound, &model.encoder.t, None, m)?;
        return Ok(HiddenVars {
            h_st,
            h_s,
            h_t,
            attention: [a_st, a_s, a_t],
        });
    }
    let w_e = bound.get(model.encoder.w_e);
    let e_s = match (&input.space, &model.config.space) {
        (SpaceInput::Coords(rows), SpaceSpec::Continuous { dim }) => {
            if rows.len() != n || rows.iter().any(|r| r.len() != *dim) {
                return Err(Error::shape("encode", format!("expected {n} rows of {dim} coordinates")));
            }
            let s = Tensor::from_fn(n, *dim, |r, c| T::of(rows[r][c]));
            let s = g.constant(s);
            g.matmul(s, w_e)?
        }
        (SpaceInput::Ids(ids), SpaceSpec::Discrete { locations }) => {
            if ids.len() != n || ids.iter().any(|&i| i >= *locations) {
                return Err(Error::shape("encode", format!("expected {n} ids below {locations}")));
            }
            let onehot = Tensor::from_fn(n, *locations, |r, c| if ids[r] == c { T::one() } else { T::zero() });
            let onehot = g.constant(onehot);
            g.matmul(onehot, w_e)?
        }
        (_, space) => return Err(Error::shape("encode", format!("input does not match {space:?}"))),
    };
    let mut pe = Vec::with_capacity(n * m);
    for &t in &input.times {
        pe.extend(positional_encode(t, m)?.into_iter().map(T::of));
    }
    let e_t = g.constant(Tensor::matrix(n, m, pe)?);
    let e_st = g.add(e_s, e_t)?;
    let (h_st, a_st) = stream(g, bound, &model.encoder.st, Some(e_st), m)?;
    let (h_s, a_s) = stream(g, bound, &model.encoder.s, Some(e_s), m)?;
    let (h_t, a_t) = stream(g, bound, &model.encoder.t, Some(e_t), m)?;
    Ok(HiddenVars {
        h_st,
        h_s,
        h_t,
        attention: [a_st, a_s, a_t],
    })
}

impl<T: Scalar> Model<T> {
    /// History representations for every prefix of `input`, `L + 1` rows.
    pub fn encode(&self, input: &EncoderInput) -> Result<HiddenRepresentation<T>> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let h = encode_graph(&mut g, self, &bound, input)?;
        Ok(HiddenRepresentation {
            h_st: g.value(h.h_st).clone(),
            h_s: g.value(h.h_s).clone(),
            h_t: g.value(h.h_t).clone(),
            attention: h.attention.map(|a| g.value(a).clone()),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use std::f64::consts::PI;

    fn model(space: SpaceSpec, m: usize) -> Model<f64> {
        let mut cfg = ModelConfig::new(space);
        cfg.embed_dim = m;
        let dim = match space {
            SpaceSpec::Continuous { dim } => dim,
            SpaceSpec::Discrete { .. } => 0,
        };
        let stats = NormalizationStats {
            time_interval_mean: 0.0,
            time_interval_std: 1.0,
            space_mean: vec![0.0; dim],
            space_std: vec![1.0; dim],
        };
        Model::new(cfg, stats, 5).unwrap()
    }

    fn input(times: &[f64], coords: &[[f64; 2]]) -> EncoderInput {
        EncoderInput {
            times: times.to_vec(),
            space: SpaceInput::Coords(coords.iter().map(|c| c.to_vec()).collect()),
        }
    }

    #[test]
    fn positional_encoding_values() {
        let e = positional_encode(0.0, 6).unwrap();
        assert_eq!(e, vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let e = positional_encode(2.0 * PI, 4).unwrap();
        assert!((e[0] - 1.0).abs() < 1e-15);
        for t in [-50.0, 0.3, 7.0, 1e4] {
            assert!(positional_encode(t, 8).unwrap().iter().all(|v| v.abs() <= 1.0));
        }
        assert!(positional_encode(1.0, 5).is_err());
    }

    #[test]
    fn space_embedding_rules() {
        let mut m = model(SpaceSpec::Continuous { dim: 2 }, 4);
        let a = embed_space(&m, &Location::Coords(vec![0.5, -1.0])).unwrap();
        let b = embed_space(&m, &Location::Coords(vec![1.5, 2.0])).unwrap();
        let ab = embed_space(&m, &Location::Coords(vec![2.0, 1.0])).unwrap();
        for j in 0..4 {
            assert!((a[j] + b[j] - ab[j]).abs() < 1e-14);
        }
        assert!(embed_space(&m, &Location::Coords(vec![1.0])).is_err());
        let w = m.encoder.w_e;
        *m.param_mut(w) = Tensor::zeros(&[2, 4]);
        assert_eq!(embed_space(&m, &Location::Coords(vec![3.0, 4.0])).unwrap(), vec![0.0; 4]);

        let d = model(SpaceSpec::Discrete { locations: 5 }, 4);
        let table = d.param(d.encoder.w_e);
        assert_eq!(embed_space(&d, &Location::Id(3)).unwrap(), table.row_slice(3).to_vec());
        assert!(embed_space(&d, &Location::Id(5)).is_err());
    }

    #[test]
    fn single_event_attention() {
        let m = model(SpaceSpec::Continuous { dim: 2 }, 8);
        let h = m.encode(&input(&[0.5], &[[0.1, 0.2]])).unwrap();
        assert_eq!(h.positions(), 2);
        for a in &h.attention {
            assert_eq!(a.get(0, 0), 1.0);
            assert_eq!(a.get(0, 1), 0.0);
            let row: f64 = a.row_slice(1).iter().sum();
            assert!((row - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn causality_is_exact() {
        let m = model(SpaceSpec::Continuous { dim: 2 }, 8);
        let base = input(&[0.2, 0.9, 1.4, 2.0], &[[0.0, 1.0], [1.0, 0.5], [-0.3, 0.2], [2.0, 2.0]]);
        let h0 = m.encode(&base).unwrap();
        for j in 0..4 {
            let mut pert = base.clone();
            pert.times[j] += 0.37;
            if let SpaceInput::Coords(c) = &mut pert.space {
                c[j][0] -= 1.1;
            }
            for k in j + 1..4 {
                pert.times[k] += 0.37;
            }
            let h1 = m.encode(&pert).unwrap();
            // Row i summarizes events 1..=i, i.e. indices 0..i.
            for i in 0..=j {
                for (a, b) in [(&h0.h_st, &h1.h_st), (&h0.h_s, &h1.h_s), (&h0.h_t, &h1.h_t)] {
                    assert_eq!(a.row_slice(i), b.row_slice(i), "row {i} changed by event {j}");
                }
            }
            assert_ne!(h0.h_st.row_slice(j + 1), h1.h_st.row_slice(j + 1));
        }
    }

    #[test]
    fn swapping_events_changes_later_rows() {
        let m = model(SpaceSpec::Continuous { dim: 2 }, 8);
        let a = input(&[0.2, 0.9, 1.4], &[[0.0, 1.0], [1.0, 0.5], [-0.3, 0.2]]);
        let b = input(&[0.2, 0.9, 1.4], &[[1.0, 0.5], [0.0, 1.0], [-0.3, 0.2]]);
        let (ha, hb) = (m.encode(&a).unwrap(), m.encode(&b).unwrap());
        assert_eq!(ha.h_st.row_slice(0), hb.h_st.row_slice(0));
        for i in 1..4 {
            assert_ne!(ha.h_st.row_slice(i), hb.h_st.row_slice(i));
        }
    }

    #[test]
    fn outputs_finite_for_bounded_inputs() {
        let m = model(SpaceSpec::Continuous { dim: 2 }, 16);
        let times: Vec<f64> = (0..30).map(|i| i as f64 / 3.0).collect();
        let coords: Vec<[f64; 2]> = (0..30).map(|i| [10.0 * ((i % 3) as f64 - 1.0), -10.0]).collect();
        let h = m.encode(&input(&times, &coords)).unwrap();
        assert!(h.h_st.is_finite() && h.h_s.is_finite() && h.h_t.is_finite());
    }

    #[test]
    fn empty_history_uses_start_token() {
        let m = model(SpaceSpec::Continuous { dim: 2 }, 8);
        let empty = input(&[], &[]);
        let h = m.encode(&empty).unwrap();
        let full = m.encode(&input(&[0.4], &[[1.0, 1.0]])).unwrap();
        assert_eq!(h.positions(), 1);
        assert_eq!(h.h_st.row_slice(0), full.h_st.row_slice(0));
    }

    #[test]
    fn discrete_input_validation() {
        let m = model(SpaceSpec::Discrete { locations: 3 }, 4);
        let ok = EncoderInput {
            times: vec![0.1, 0.2],
            space: SpaceInput::Ids(vec![0, 2]),
        };
        assert!(m.encode(&ok).is_ok());
        let bad = EncoderInput {
            times: vec![0.1],
            space: SpaceInput::Ids(vec![3]),
        };
        assert!(m.encode(&bad).is_err());
    }

    #[test]
    fn input_from_events_normalizes_time() {
        let stats = NormalizationStats {
            time_interval_mean: 1.0,
            time_interval_std: 2.0,
            space_mean: vec![1.0],
            space_std: vec![0.5],
        };
        let ev = vec![Event::continuous(3.0, vec![2.0]), Event::continuous(5.0, vec![0.0])];
        let inp = EncoderInput::from_events(&ev, 1.0, &stats, &SpaceSpec::Continuous { dim: 1 }).unwrap();
        assert_eq!(inp.times, vec![1.0, 2.0]);
        assert_eq!(inp.space, SpaceInput::Coords(vec![vec![2.0], vec![-2.0]]));
    }
}
