//! Controllable trajectory prediction with a preference-aligned Beta-latent CVAE.
//!
//! The crate is a self-contained laboratory: a small reverse-mode autodiff
//! engine ([`tensorgraph`]), Beta-distribution latent machinery ([`betalat`]),
//! a synthetic multi-agent scene generator ([`scenegen`]), the CVAE predictor
//! and its base losses ([`model`]), the pairwise preference loss that aligns
//! one latent dimension with average prediction velocity ([`prefloss`]), a
//! deterministic trainer ([`trainer`]), and the evaluation protocol —
//! violation rates, latent traversal, posterior re-encoding quality —
//! ([`evalsuite`]).
//!
//! Start with the runnable examples (`cargo run --example <name>`): each one
//! demonstrates a single capability end to end. The `prefcvae` binary wires
//! the same building blocks into a pipeline CLI (`gen-data`, `train`, `eval`,
//! `traverse`, `sweep`, `crosstest`, `repro`).

pub mod betalat;
pub mod cli;
pub mod evalsuite;
pub mod model;
pub mod plotsvg;
pub mod prefloss;
pub mod rngstream;
pub mod scenegen;
pub mod tensorgraph;
pub mod trainer;

pub use betalat::{BetaParams, LatentConfig};
pub use model::{ModelConfig, PredictorModel};
pub use prefloss::PrefConfig;
pub use scenegen::{AgentTrack, DatasetManifest, Scene};
pub use tensorgraph::{Graph, NodeId, Tensor, TensorError};
pub use trainer::TrainConfig;
