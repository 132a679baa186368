//! Attribution of synthesized images to their generator architecture, trained
//! with representation mixing and a compound real/fake + source objective.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision used by the command-line pipeline.

pub mod cli;
pub mod config;
pub mod corruptions;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod imaging;
pub mod losses;
pub mod mix;
pub mod model;
pub mod nn;
pub mod scalar;
pub mod seeding;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use mix::{repmix, sample_mix_weights, MixSpec};
pub use model::{AttributionHeads, AttributionModel, Embedding, ModelConfig, Prediction};
pub use nn::{BackboneSpec, InsertionPoint};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Double-precision model; the pipeline default.
pub type Model = AttributionModel<f64>;
/// Single-precision model.
pub type Model32 = AttributionModel<f32>;
