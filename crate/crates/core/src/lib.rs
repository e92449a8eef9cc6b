//! First-spike temporal-coding spiking neural networks for object
//! recognition from raw temporal pulses.
//!
//! Neurons are non-leaky integrate-and-fire units with exponentially
//! decaying synaptic current; each fires at most once, and the network's
//! answer is the output neuron that fires first. All layer math runs on
//! `z = exp(t)`, where the firing time has a closed form.
//!
//! Main pieces:
//! - [`spike`], [`oracle`]: single-neuron closed form, gradients and a
//!   numerical integrator to check them against
//! - [`layer`], [`model`], [`checkpoint`]: dense and convolutional layers,
//!   network assembly and the `SNNM` checkpoint format
//! - [`train`]: loss, backpropagation and optimizers
//! - [`simlidar`], [`ingest`]: dataset synthesis and sensor ingestion
//! - [`eval`]: accuracy, spikes-to-decision, latency and energy metrics
//!
//! The numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below pick a precision.

pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod frame;
pub mod ingest;
pub mod layer;
pub mod model;
pub mod oracle;
pub mod scalar;
pub mod simlidar;
pub mod spike;
pub mod train;

pub use dataset::{Dataset, DatasetManifest, Sample, Split};
pub use error::{Error, Result};
pub use frame::PulseFrame;
pub use layer::LayerSpec;
pub use model::{forward_model, ModelSpec};
pub use scalar::Scalar;
pub use train::TrainConfig;

/// Network in checkpoint precision; what the CLI trains and evaluates.
pub type Model = model::Model<f32>;
/// Network in double precision, for gradient and oracle checks.
pub type Model64 = model::Model<f64>;
pub type ForwardTrace = model::ForwardTrace<f32>;
pub type ForwardTrace64 = model::ForwardTrace<f64>;
pub type ZVector = spike::ZVector<f32>;
pub type ZVector64 = spike::ZVector<f64>;
pub type SpikeVector64 = spike::SpikeVector<f64>;
pub type NeuronParams64 = spike::NeuronParams<f64>;
pub type CausalSolution64 = spike::CausalSolution<f64>;
pub type LossValue = train::LossValue<f32>;
