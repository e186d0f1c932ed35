//! Spatio-temporal diffusion point processes: event simulation, a
//! self-attention history encoder, a co-attention denoising diffusion
//! model of the next event, training and evaluation.

pub mod denoiser;
pub mod diffcore;
pub mod diffusion;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod events;
pub mod model;
pub mod scalar;
pub mod simulate;
pub mod stats;
pub mod train;

pub use error::{Error, Result};
pub use events::{Dataset, Event, EventSequence, Location, NormalizationStats, SpaceSpec, Split};
pub use scalar::Scalar;

pub type Tensor = diffcore::Tensor<f64>;
pub type Graph = diffcore::Graph<f64>;
pub type Model = model::Model<f64>;
pub type HiddenRepresentation = encoder::HiddenRepresentation<f64>;
pub type TrainOutcome = train::TrainOutcome<f64>;
