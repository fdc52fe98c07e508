//! α-GAN networks: architecture configuration, parameter registry and
//! forward graphs.

pub mod config;
pub mod gradcheck;
pub mod model;
pub mod params;

pub use config::{ArchConfig, ConvLayer, ConvTrace, ShapePlan, TemporalConfig, TemporalKind, TemporalPlan};
pub use model::{onehot, sequence_tensor, sinusoidal_encoding, AlphaGan, Embedding, Graph};
pub use params::{init_params, param_specs, Bound, Component, ModelParams, ParamSpec};
