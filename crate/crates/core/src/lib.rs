//! Bayesian models for predicting the early popularity of video games.
//!
//! The crate covers the full pipeline: ingesting scraped catalog files,
//! feature engineering, six regression variants built on normal and folded
//! normal likelihoods, a NUTS sampler with convergence diagnostics, PSIS-LOO
//! model comparison, and posterior interpretation reports.
//!
//! Numerical code is generic over [`Scalar`] (implemented for `f32` and
//! `f64`). The aliases at the crate root fix the scalar to `f64`, which is
//! what the pipeline and the CLI use.

pub mod analysis;
pub mod distributions;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod ingest;
pub mod io;
pub mod models;
pub mod sampler;
pub mod scalar;
pub mod synthetic;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use features::{ModelData as GenericModelData, TrainingStats};
pub use ingest::{GameRecord, RawCatalogRow};
pub use models::{Likelihood, ModelSpec};
pub use sampler::SamplerConfig;

/// Design matrix, genre sets and targets in double precision.
pub type ModelData = features::ModelData<f64>;
/// Typed model parameters in double precision.
pub type ParamVector = models::ParamVector<f64>;
/// A model bound to a dataset, ready for sampling.
pub type Model<'a> = models::Model<'a, f64>;
/// Posterior draws in double precision.
pub type PosteriorSamples = sampler::PosteriorSamples<f64>;
/// PSIS-LOO result in double precision.
pub type LooResult = evaluation::LooResult<f64>;
/// Folded normal parameters in double precision.
pub type FoldedNormal = distributions::FoldedNormal<f64>;
