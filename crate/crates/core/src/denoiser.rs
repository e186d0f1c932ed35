//! Co-attention denoising network.
//!
//! Two branches turn the noisy value of each domain into features
//! `x_s`, `x_t`, conditioned on `h_s`, `h_t` and the step embedding. Each
//! domain's noise estimate reads a convex combination of both branches,
//! with weights from the entangled history `h_st` and the step.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::diffcore::{Axis, Graph, Tensor, Var};
use crate::encoder::{encode_graph, EncoderInput, HiddenRepresentation};
use crate::error::{Error, Result};
use crate::events::EventSequence;
use crate::model::{BranchParams, Bound, Model};
use crate::scalar::Scalar;

/// Sinusoidal embedding of the integer step `k`, same form as the
/// positional encoding.
pub fn step_embed(k: usize, steps: usize, m: usize) -> Result<Vec<f64>> {
    if k == 0 || k > steps {
        return Err(Error::invalid(format!("step {k} outside 1..={steps}")));
    }
    crate::encoder::positional_encode(k as f64, m)
}

/// Precomputed step embeddings for `k = 1..=K`.
#[derive(Clone, Debug)]
pub struct StepTable {
    m: usize,
    rows: Vec<Vec<f64>>,
}

impl StepTable {
    pub fn new(steps: usize, m: usize) -> Result<Self> {
        Ok(Self {
            m,
            rows: (1..=steps).map(|k| step_embed(k, steps, m)).collect::<Result<_>>()?,
        })
    }

    pub fn get(&self, k: usize) -> &[f64] {
        &self.rows[k - 1]
    }

    /// One embedding row per entry of `ks`.
    pub fn matrix<T: Scalar>(&self, ks: &[usize]) -> Tensor<T> {
        Tensor::from_fn(ks.len(), self.m, |r, c| T::of(self.rows[ks[r] - 1][c]))
    }
}

/// History-dependent terms, computed once per history and reused at
/// every step.
#[derive(Clone, Debug)]
pub struct Conditioning {
    pub sa: Var,
    pub ta: Var,
    pub space: Vec<Var>,
    pub time: Vec<Var>,
}

#[derive(Clone, Copy, Debug)]
pub struct DenoiseVars {
    pub eps_s: Var,
    pub eps_t: Var,
    pub alpha_s: Var,
    pub alpha_t: Var,
}

fn branch_conditioning<T: Scalar>(g: &mut Graph<T>, bound: &Bound, p: &BranchParams, h: Var) -> Result<Vec<Var>> {
    (0..p.w.len())
        .map(|l| {
            let c = g.matmul(h, bound.get(p.w_h[l]))?;
            let c = g.add_row(c, bound.get(p.b_h[l]))?;
            g.add_row(c, bound.get(p.b[l]))
        })
        .collect()
}

pub fn condition_graph<T: Scalar>(
    g: &mut Graph<T>,
    model: &Model<T>,
    bound: &Bound,
    h_st: Var,
    h_s: Var,
    h_t: Var,
) -> Result<Conditioning> {
    let d = &model.denoiser;
    let sa = g.matmul(h_st, bound.get(d.sa_h))?;
    let sa = g.add_row(sa, bound.get(d.sa_b))?;
    let ta = g.matmul(h_st, bound.get(d.ta_h))?;
    let ta = g.add_row(ta, bound.get(d.ta_b))?;
    Ok(Conditioning {
        sa,
        ta,
        space: branch_conditioning(g, bound, &d.space, h_s)?,
        time: branch_conditioning(g, bound, &d.time, h_t)?,
    })
}

fn branch<T: Scalar>(g: &mut Graph<T>, bound: &Bound, p: &BranchParams, cond: &[Var], x: Var, e_k: Var) -> Result<Var> {
    let mut x = x;
    for (l, &c) in cond.iter().enumerate() {
        let y = g.matmul(x, bound.get(p.w[l]))?;
        let y = g.add(y, c)?;
        let y = g.add(y, e_k)?;
        x = g.relu(y)?;
    }
    Ok(x)
}

fn mix<T: Scalar>(g: &mut Graph<T>, alpha: Var, x_s: Var, x_t: Var) -> Result<Var> {
    let a0 = g.column(alpha, 0)?;
    let a1 = g.column(alpha, 1)?;
    let l = g.scale_rows(x_s, a0)?;
    let r = g.scale_rows(x_t, a1)?;
    g.add(l, r)
}

/// Co-attention weights: row-wise softmax over `{space, time}` branches.
pub fn co_attention_graph<T: Scalar>(
    g: &mut Graph<T>,
    model: &Model<T>,
    bound: &Bound,
    cond: &Conditioning,
    e_k: Var,
) -> Result<(Var, Var)> {
    let d = &model.denoiser;
    let ls = g.matmul(e_k, bound.get(d.sa_k))?;
    let ls = g.add(ls, cond.sa)?;
    let lt = g.matmul(e_k, bound.get(d.ta_k))?;
    let lt = g.add(lt, cond.ta)?;
    Ok((g.softmax(ls, Axis::Cols)?, g.softmax(lt, Axis::Cols)?))
}

/// Predicted noise for rows of noisy space `s_k` (`R x d`) and noisy
/// intervals `tau_k` (`R x 1`) at step embeddings `e_k` (`R x M`).
pub fn denoise_graph<T: Scalar>(
    g: &mut Graph<T>,
    model: &Model<T>,
    bound: &Bound,
    cond: &Conditioning,
    s_k: Var,
    tau_k: Var,
    e_k: Var,
) -> Result<DenoiseVars> {
    let d = &model.denoiser;
    let x_s = branch(g, bound, &d.space, &cond.space, s_k, e_k)?;
    let x_t = branch(g, bound, &d.time, &cond.time, tau_k, e_k)?;
    let (alpha_s, alpha_t) = co_attention_graph(g, model, bound, cond, e_k)?;
    let cs = mix(g, alpha_s, x_s, x_t)?;
    let ct = mix(g, alpha_t, x_s, x_t)?;
    let eps_s = g.matmul(cs, bound.get(d.head_s))?;
    let eps_s = g.add_row(eps_s, bound.get(d.head_s_b))?;
    let eps_t = g.matmul(ct, bound.get(d.head_t))?;
    let eps_t = g.add_row(eps_t, bound.get(d.head_t_b))?;
    Ok(DenoiseVars {
        eps_s,
        eps_t,
        alpha_s,
        alpha_t,
    })
}

/// Predicted noise for `rows` states, flattened row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisePrediction {
    pub eps_s: Vec<f64>,
    pub eps_t: Vec<f64>,
}

/// Inference-time denoiser bound to fixed history rows. The graph is
/// rewound after every call, so repeated steps reuse its storage.
pub struct Denoiser<'a, T: Scalar> {
    model: &'a Model<T>,
    graph: Graph<T>,
    bound: Bound,
    cond: Conditioning,
    base: usize,
    rows: usize,
    steps: StepTable,
}

impl<'a, T: Scalar> Denoiser<'a, T> {
    pub fn new(model: &'a Model<T>, h: &HiddenRepresentation<T>) -> Result<Self> {
        let mut graph = Graph::new();
        let bound = model.bind(&mut graph, false);
        let h_st = graph.constant(h.h_st.clone());
        let h_s = graph.constant(h.h_s.clone());
        let h_t = graph.constant(h.h_t.clone());
        let cond = condition_graph(&mut graph, model, &bound, h_st, h_s, h_t)?;
        Ok(Self {
            model,
            base: graph.len(),
            graph,
            bound,
            cond,
            rows: h.positions(),
            steps: StepTable::new(model.schedule.steps(), model.config.embed_dim)?,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    fn step_rows(&mut self, k: usize) -> Result<Var> {
        if k == 0 || k > self.model.schedule.steps() {
            return Err(Error::invalid(format!("step {k} outside 1..={}", self.model.schedule.steps())));
        }
        let ks = vec![k; self.rows];
        Ok(self.graph.constant(self.steps.matrix(&ks)))
    }

    /// Noise prediction at step `k` for `rows x d` spatial and `rows`
    /// temporal noisy values.
    pub fn predict(&mut self, s_k: &[f64], tau_k: &[f64], k: usize) -> Result<NoisePrediction> {
        let d = self.model.config.space_dim();
        if s_k.len() != self.rows * d || tau_k.len() != self.rows {
            return Err(Error::shape(
                "denoise",
                format!("{} rows need {} spatial and {} temporal values", self.rows, self.rows * d, self.rows),
            ));
        }
        let result = (|| {
            let e_k = self.step_rows(k)?;
            let s = self.graph.constant(Tensor::matrix(self.rows, d, s_k.iter().map(|&v| T::of(v)).collect())?);
            let t = self.graph.constant(Tensor::matrix(self.rows, 1, tau_k.iter().map(|&v| T::of(v)).collect())?);
            let out = denoise_graph(&mut self.graph, self.model, &self.bound, &self.cond, s, t, e_k)?;
            Ok(NoisePrediction {
                eps_s: self.graph.value(out.eps_s).data().iter().map(|v| v.f64()).collect(),
                eps_t: self.graph.value(out.eps_t).data().iter().map(|v| v.f64()).collect(),
            })
        })();
        self.graph.truncate(self.base);
        result
    }

    /// `(alpha_s, alpha_t)` at step `k`, each `rows x 2` as
    /// `[weight on space, weight on time]`.
    pub fn co_attention(&mut self, k: usize) -> Result<(Tensor<T>, Tensor<T>)> {
        let result = (|| {
            let e_k = self.step_rows(k)?;
            let (a, b) = co_attention_graph(&mut self.graph, self.model, &self.bound, &self.cond, e_k)?;
            Ok((self.graph.value(a).clone(), self.graph.value(b).clone()))
        })();
        self.graph.truncate(self.base);
        result
    }
}

/// Mean co-attention weights of one domain at one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub domain: String,
    pub weight_on_time: f64,
    pub weight_on_space: f64,
}

/// Mean `alpha_s` and `alpha_t` over every event of `sequences`, at each
/// step in `steps`. The weights depend on history and step only.
pub fn attention_trace<T: Scalar>(model: &Model<T>, sequences: &[EventSequence], steps: &[usize]) -> Result<Vec<TraceRow>> {
    if sequences.is_empty() {
        return Err(Error::invalid("attention trace needs at least one sequence"));
    }
    let mut sums = vec![[0.0f64; 4]; steps.len()];
    let mut count = 0usize;
    for seq in sequences {
        let input = EncoderInput::from_events(&seq.events, seq.window_start, &model.stats, &model.config.space)?;
        let h = model.encode(&input.prefix(seq.len() - 1))?;
        let mut den = Denoiser::new(model, &h)?;
        for (i, &k) in steps.iter().enumerate() {
            let (a_s, a_t) = den.co_attention(k)?;
            for r in 0..a_s.rows() {
                sums[i][0] += a_s.get(r, 0).f64();
                sums[i][1] += a_s.get(r, 1).f64();
                sums[i][2] += a_t.get(r, 0).f64();
                sums[i][3] += a_t.get(r, 1).f64();
            }
        }
        count += seq.len();
    }
    let n = count as f64;
    Ok(steps
        .iter()
        .zip(&sums)
        .flat_map(|(&step, s)| {
            [
                TraceRow {
                    step,
                    domain: "space".into(),
                    weight_on_space: s[0] / n,
                    weight_on_time: s[1] / n,
                },
                TraceRow {
                    step,
                    domain: "time".into(),
                    weight_on_space: s[2] / n,
                    weight_on_time: s[3] / n,
                },
            ]
        })
        .collect())
}

/// Rows `step,domain,weight_on_time,weight_on_space`.
pub fn write_trace_csv<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(crate::diffusion::csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Graph pieces of one full encoder and denoiser pass, for training and
/// gradient checks.
pub struct Forward {
    pub hidden: crate::encoder::HiddenVars,
    pub out: DenoiseVars,
}

/// Encodes `input` (the history of `R` target events, `R` rows used) and
/// denoises noisy targets at per-row steps.
#[allow(clippy::too_many_arguments)]
pub fn forward_graph<T: Scalar>(
    g: &mut Graph<T>,
    model: &Model<T>,
    bound: &Bound,
    input: &EncoderInput,
    s_k: Tensor<T>,
    tau_k: Tensor<T>,
    e_k: Tensor<T>,
) -> Result<Forward> {
    let hidden = encode_graph(g, model, bound, input)?;
    let rows = s_k.rows();
    let (h_st, h_s, h_t) = if g.value(hidden.h_st).rows() == rows {
        (hidden.h_st, hidden.h_s, hidden.h_t)
    } else {
        (g.rows(hidden.h_st, 0, rows)?, g.rows(hidden.h_s, 0, rows)?, g.rows(hidden.h_t, 0, rows)?)
    };
    let cond = condition_graph(g, model, bound, h_st, h_s, h_t)?;
    let s = g.constant(s_k);
    let t = g.constant(tau_k);
    let e = g.constant(e_k);
    let out = denoise_graph(g, model, bound, &cond, s, t, e)?;
    Ok(Forward { hidden, out })
}
