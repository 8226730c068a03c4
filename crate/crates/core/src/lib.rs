//! Box-supervised semantic segmentation with a learned, class-agnostic
//! pseudo-mask generator.
//!
//! The numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision used by the training pipeline.

pub mod config;
pub mod deploy;
pub mod em;
pub mod error;
pub mod eval;
pub mod mask;
pub mod nets;
pub mod rundir;
pub mod scalar;
pub mod seed;
pub mod synth;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use scalar::Scalar;

/// Precision of trained parameters and activations.
pub type Real = f32;

pub type FeatureMap = nets::FeatureMap<Real>;
pub type SegNet = nets::SegNet<Real>;
pub type Lpg = nets::Lpg<Real>;
pub type ClassProbMap = nets::ClassProbMap<Real>;
pub type TwoChannelScore = nets::TwoChannelScore<Real>;
