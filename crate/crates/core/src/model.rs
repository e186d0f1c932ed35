//! Learnable parameters of the encoder and denoiser.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, Tensor, Var};
use crate::diffusion::{DiffusionSchedule, ScheduleConfig};
use crate::error::{Error, Result};
use crate::events::{NormalizationStats, SpaceSpec};
use crate::scalar::Scalar;
use crate::simulate::SimRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub space: SpaceSpec,
    /// Embedding and hidden width `M`.
    pub embed_dim: usize,
    /// Layers per denoiser branch.
    pub branch_layers: usize,
    pub schedule: ScheduleConfig,
}

impl ModelConfig {
    pub fn new(space: SpaceSpec) -> Self {
        Self {
            space,
            embed_dim: 64,
            branch_layers: 3,
            schedule: ScheduleConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.space.validate()?;
        if self.embed_dim < 2 || !self.embed_dim.is_multiple_of(2) {
            return Err(Error::invalid(format!("embedding width must be even and >= 2, got {}", self.embed_dim)));
        }
        if self.branch_layers == 0 {
            return Err(Error::invalid("denoiser branches need at least one layer"));
        }
        DiffusionSchedule::from_config(self.schedule)?;
        Ok(())
    }

    /// Width of the diffused spatial value: `D`, or `M` for discrete space.
    pub fn space_dim(&self) -> usize {
        match self.space {
            SpaceSpec::Continuous { dim } => dim,
            SpaceSpec::Discrete { .. } => self.embed_dim,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One self-attention stream with its start token and feed-forward.
#[derive(Clone, Debug)]
pub struct StreamParams {
    pub start: ParamId,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Clone, Debug)]
pub struct EncoderParams {
    /// Rows are location embeddings: `D x M` continuous, `N x M` discrete.
    pub w_e: ParamId,
    pub st: StreamParams,
    pub s: StreamParams,
    pub t: StreamParams,
}

/// Per layer `x <- relu(x W + b + h W_h + b_h + e_k)`.
#[derive(Clone, Debug)]
pub struct BranchParams {
    pub w: Vec<ParamId>,
    pub b: Vec<ParamId>,
    pub w_h: Vec<ParamId>,
    pub b_h: Vec<ParamId>,
}

#[derive(Clone, Debug)]
pub struct DenoiserParams {
    /// Co-attention logits `h_st W_h + e_k W_k + b` for the spatial noise.
    pub sa_h: ParamId,
    pub sa_k: ParamId,
    pub sa_b: ParamId,
    pub ta_h: ParamId,
    pub ta_k: ParamId,
    pub ta_b: ParamId,
    pub space: BranchParams,
    pub time: BranchParams,
    pub head_s: ParamId,
    pub head_s_b: ParamId,
    pub head_t: ParamId,
    pub head_t_b: ParamId,
}

#[derive(Clone, Copy)]
enum Init {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    Uniform(usize),
    Zero,
}

struct Builder {
    names: Vec<String>,
    shapes: Vec<[usize; 2]>,
    inits: Vec<Init>,
}

impl Builder {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) -> ParamId {
        self.names.push(name);
        self.shapes.push([rows, cols]);
        self.inits.push(init);
        ParamId(self.names.len() - 1)
    }

    fn stream(&mut self, tag: &str, m: usize) -> StreamParams {
        let u = Init::Uniform(m);
        StreamParams {
            start: self.add(format!("encoder.{tag}.start"), 1, m, u),
            wq: self.add(format!("encoder.{tag}.wq"), m, m, u),
            wk: self.add(format!("encoder.{tag}.wk"), m, m, u),
            wv: self.add(format!("encoder.{tag}.wv"), m, m, u),
            w1: self.add(format!("encoder.{tag}.ff1.w"), m, m, u),
            b1: self.add(format!("encoder.{tag}.ff1.b"), 1, m, u),
            w2: self.add(format!("encoder.{tag}.ff2.w"), m, m, u),
            b2: self.add(format!("encoder.{tag}.ff2.b"), 1, m, u),
        }
    }

    fn branch(&mut self, tag: &str, input: usize, m: usize, layers: usize) -> BranchParams {
        let mut p = BranchParams {
            w: Vec::new(),
            b: Vec::new(),
            w_h: Vec::new(),
            b_h: Vec::new(),
        };
        for l in 0..layers {
            let fan = if l == 0 { input } else { m };
            p.w.push(self.add(format!("denoiser.{tag}.{l}.w"), fan, m, Init::Uniform(fan)));
            p.b.push(self.add(format!("denoiser.{tag}.{l}.b"), 1, m, Init::Uniform(fan)));
            p.w_h.push(self.add(format!("denoiser.{tag}.{l}.w_h"), m, m, Init::Uniform(m)));
            p.b_h.push(self.add(format!("denoiser.{tag}.{l}.b_h"), 1, m, Init::Uniform(m)));
        }
        p
    }
}

/// Encoder, denoiser, schedule and normalization: everything needed to
/// sample or score events.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub stats: NormalizationStats,
    pub schedule: DiffusionSchedule,
    pub encoder: EncoderParams,
    pub denoiser: DenoiserParams,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
}

impl<T: Scalar> Model<T> {
    /// Fresh model with parameters drawn from `seed`.
    pub fn new(config: ModelConfig, stats: NormalizationStats, seed: u64) -> Result<Self> {
        config.validate()?;
        let (encoder, denoiser, builder) = layout(&config);
        let mut rng = SimRng::seed_from_u64(seed);
        let params = builder
            .shapes
            .iter()
            .zip(&builder.inits)
            .map(|(&[r, c], init)| match *init {
                Init::Zero => Tensor::zeros(&[r, c]),
                Init::Uniform(fan) => {
                    let bound = 1.0 / (fan.max(1) as f64).sqrt();
                    Tensor::from_fn(r, c, |_, _| T::of(rng.random_range(-bound..=bound)))
                }
            })
            .collect();
        Ok(Self {
            schedule: DiffusionSchedule::from_config(config.schedule)?,
            config,
            stats,
            encoder,
            denoiser,
            names: builder.names,
            params,
        })
    }

    /// Model from named tensors, checked against the layout of `config`.
    pub fn from_named(config: ModelConfig, stats: NormalizationStats, named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        config.validate()?;
        let (encoder, denoiser, builder) = layout(&config);
        if named.len() != builder.names.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                builder.names.len(),
                named.len()
            )));
        }
        let mut params = Vec::with_capacity(named.len());
        for ((name, tensor), (want, shape)) in named.into_iter().zip(builder.names.iter().zip(&builder.shapes)) {
            if &name != want || tensor.shape() != shape {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} {:?} does not match expected {want} {shape:?}",
                    tensor.shape()
                )));
            }
            if !tensor.is_finite() {
                return Err(Error::Checkpoint(format!("parameter {name} has non-finite entries")));
            }
            params.push(tensor);
        }
        Ok(Self {
            schedule: DiffusionSchedule::from_config(config.schedule)?,
            config,
            stats,
            encoder,
            denoiser,
            names: builder.names,
            params,
        })
    }

    pub fn param(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0]
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.params)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// Pushes every parameter into `graph`, as trainable leaves or constants.
    pub fn bind(&self, graph: &mut Graph<T>, trainable: bool) -> Bound {
        Bound {
            vars: self.params.iter().map(|p| graph.leaf(p.clone(), trainable)).collect(),
        }
    }

    /// Location embedding table (rows), for discrete space.
    pub fn location_table(&self) -> Vec<Vec<f64>> {
        let w = self.param(self.encoder.w_e);
        (0..w.rows()).map(|r| w.row_slice(r).iter().map(|v| v.f64()).collect()).collect()
    }

    /// Precision change of every parameter.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            stats: self.stats.clone(),
            schedule: self.schedule.clone(),
            encoder: self.encoder.clone(),
            denoiser: self.denoiser.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
        }
    }
}

/// Graph handles of a bound model, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Handles in parameter order, e.g. from a gradient check.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn get(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

fn layout(config: &ModelConfig) -> (EncoderParams, DenoiserParams, Builder) {
    let m = config.embed_dim;
    let mut b = Builder {
        names: Vec::new(),
        shapes: Vec::new(),
        inits: Vec::new(),
    };
    let input = config.space.input_dim();
    let encoder = EncoderParams {
        w_e: b.add("encoder.w_e".into(), input, m, Init::Uniform(input)),
        st: b.stream("st", m),
        s: b.stream("s", m),
        t: b.stream("t", m),
    };
    let d = config.space_dim();
    let layers = config.branch_layers;
    let denoiser = DenoiserParams {
        sa_h: b.add("denoiser.sa.w_h".into(), m, 2, Init::Zero),
        sa_k: b.add("denoiser.sa.w_k".into(), m, 2, Init::Zero),
        sa_b: b.add("denoiser.sa.b".into(), 1, 2, Init::Zero),
        ta_h: b.add("denoiser.ta.w_h".into(), m, 2, Init::Zero),
        ta_k: b.add("denoiser.ta.w_k".into(), m, 2, Init::Zero),
        ta_b: b.add("denoiser.ta.b".into(), 1, 2, Init::Zero),
        space: b.branch("space", d, m, layers),
        time: b.branch("time", 1, m, layers),
        head_s: b.add("denoiser.head_s.w".into(), m, d, Init::Uniform(m)),
        head_s_b: b.add("denoiser.head_s.b".into(), 1, d, Init::Uniform(m)),
        head_t: b.add("denoiser.head_t.w".into(), m, 1, Init::Uniform(m)),
        head_t_b: b.add("denoiser.head_t.b".into(), 1, 1, Init::Uniform(m)),
    };
    (encoder, denoiser, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(dim: usize) -> NormalizationStats {
        NormalizationStats {
            time_interval_mean: 0.0,
            time_interval_std: 1.0,
            space_mean: vec![0.0; dim],
            space_std: vec![1.0; dim],
        }
    }

    #[test]
    fn layout_shapes() {
        let mut cfg = ModelConfig::new(SpaceSpec::Continuous { dim: 2 });
        cfg.embed_dim = 8;
        let m: Model<f64> = Model::new(cfg, stats(2), 0).unwrap();
        assert_eq!(m.param(m.encoder.w_e).shape(), &[2, 8]);
        assert_eq!(m.param(m.denoiser.space.w[0]).shape(), &[2, 8]);
        assert_eq!(m.param(m.denoiser.time.w[0]).shape(), &[1, 8]);
        assert_eq!(m.param(m.denoiser.space.w[2]).shape(), &[8, 8]);
        assert_eq!(m.param(m.denoiser.head_s).shape(), &[8, 2]);
        let bound = 1.0 / 8f64.sqrt();
        assert!(m.param(m.encoder.st.wq).max_abs() <= bound);
        assert_eq!(m.param(m.denoiser.sa_h).max_abs(), 0.0);
    }

    #[test]
    fn discrete_diffuses_in_embedding_space() {
        let mut cfg = ModelConfig::new(SpaceSpec::Discrete { locations: 5 });
        cfg.embed_dim = 6;
        let m: Model<f64> = Model::new(cfg, stats(0), 0).unwrap();
        assert_eq!(m.param(m.encoder.w_e).shape(), &[5, 6]);
        assert_eq!(m.param(m.denoiser.head_s).shape(), &[6, 6]);
        assert_eq!(m.location_table().len(), 5);
    }

    #[test]
    fn odd_width_rejected() {
        let mut cfg = ModelConfig::new(SpaceSpec::Continuous { dim: 2 });
        cfg.embed_dim = 7;
        assert!(Model::<f64>::new(cfg, stats(2), 0).is_err());
    }

    #[test]
    fn named_round_trip_and_mismatch() {
        let mut cfg = ModelConfig::new(SpaceSpec::Continuous { dim: 1 });
        cfg.embed_dim = 4;
        let m: Model<f64> = Model::new(cfg.clone(), stats(1), 3).unwrap();
        let named: Vec<_> = m.named().map(|(n, t)| (n.to_string(), t.clone())).collect();
        let back = Model::from_named(cfg.clone(), stats(1), named.clone()).unwrap();
        assert_eq!(back.params(), m.params());
        let mut bad = named;
        bad.pop();
        assert!(Model::<f64>::from_named(cfg, stats(1), bad).is_err());
    }

    #[test]
    fn seeds_replay() {
        let cfg = ModelConfig::new(SpaceSpec::Continuous { dim: 2 });
        let a: Model<f64> = Model::new(cfg.clone(), stats(2), 9).unwrap();
        let b: Model<f64> = Model::new(cfg, stats(2), 9).unwrap();
        assert_eq!(a.params(), b.params());
    }
}
