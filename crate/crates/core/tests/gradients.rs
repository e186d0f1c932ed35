use dstpp::denoiser::StepTable;
use dstpp::diffusion::ScheduleConfig;
use dstpp::model::{Model, ModelConfig, ParamId};
use dstpp::simulate::SimRng;
use dstpp::train::{check_model_gradient, LossInputs};
use dstpp::{Event, EventSequence, NormalizationStats, SpaceSpec};
use rand::{Rng, SeedableRng};

fn config(space: SpaceSpec) -> ModelConfig {
    ModelConfig {
        space,
        embed_dim: 4,
        branch_layers: 2,
        schedule: ScheduleConfig {
            steps: 8,
            beta_start: 1e-2,
            beta_end: 0.3,
        },
    }
}

fn stats(dim: usize) -> NormalizationStats {
    NormalizationStats {
        time_interval_mean: 0.8,
        time_interval_std: 0.5,
        space_mean: vec![0.1; dim],
        space_std: vec![1.3; dim],
    }
}

fn nudge_co_attention(m: &mut Model<f64>) {
    let ids = [m.denoiser.sa_h, m.denoiser.ta_h, m.denoiser.sa_k, m.denoiser.ta_k];
    for (j, id) in ids.into_iter().enumerate() {
        for (i, x) in m.param_mut(id).data_mut().iter_mut().enumerate() {
            *x = 0.05 * (((i + j) % 5) as f64 - 2.0);
        }
    }
}

/// Gradients at rounding-noise level (~1e-9 here) are compared against an
/// absolute floor rather than their own size.
fn check(m: &Model<f64>, seq: &EventSequence, skip: &[ParamId]) -> (f64, String) {
    let steps = StepTable::new(m.config.schedule.steps, m.config.embed_dim).unwrap();
    let inputs = LossInputs::draw(m, &steps, seq, &mut SimRng::seed_from_u64(5)).unwrap();
    let r = check_model_gradient(m, &inputs, 1e-5, 1e-6, skip).unwrap();
    (r.max_relative_error, r.worst)
}

fn draw_sequence(seed: u64, space: &SpaceSpec) -> EventSequence {
    let mut rng = SimRng::seed_from_u64(1000 + seed);
    let len = rng.random_range(1..=5);
    let mut t = 0.0;
    let events = (0..len)
        .map(|_| {
            t += rng.random_range(0.05..1.5);
            match space {
                SpaceSpec::Continuous { dim } => Event::continuous(t, (0..*dim).map(|_| rng.random_range(-2.0..2.0)).collect()),
                SpaceSpec::Discrete { locations } => Event::discrete(t, rng.random_range(0..*locations)),
            }
        })
        .collect();
    EventSequence::new(format!("g{seed}"), 0.0, t + 1.0, events, space).unwrap()
}

#[test]
fn full_model_gradient_continuous() {
    let space = SpaceSpec::Continuous { dim: 2 };
    for seed in 0..20 {
        let mut m: Model<f64> = Model::new(config(space), stats(2), seed).unwrap();
        nudge_co_attention(&mut m);
        let seq = draw_sequence(seed, &space);
        let (err, at) = check(&m, &seq, &[]);
        assert!(err <= 1e-4, "seed {seed}: max relative error {err} at {at}");
    }
}

#[test]
fn full_model_gradient_discrete() {
    let space = SpaceSpec::Discrete { locations: 3 };
    for seed in 0..5 {
        let mut m: Model<f64> = Model::new(config(space), stats(0), 100 + seed).unwrap();
        nudge_co_attention(&mut m);
        let seq = draw_sequence(seed, &space);
        // location rows double as detached regression targets
        let w_e = m.encoder.w_e;
        let (err, at) = check(&m, &seq, &[w_e]);
        assert!(err <= 1e-4, "seed {seed}: max relative error {err} at {at}");
    }
}
