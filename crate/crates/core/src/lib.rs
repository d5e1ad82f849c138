//! Marchenko-Pastur threshold pruning for dense networks.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common choices. Spectral statistics are always
//! computed in `f64`.

pub mod data;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod nn;
pub mod pruning;
pub mod rmt;
pub mod scalar;
pub mod spectral;
pub mod spiked;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Single-precision network, the training default.
pub type Net = nn::DenseNet<f32>;
pub type Net64 = nn::DenseNet<f64>;
pub type Slot = nn::LayerSlot<f32>;
pub type Dataset = data::Dataset<f32>;
pub type Dataset64 = data::Dataset<f64>;
pub type Factors = spectral::SvdFactors<f64>;
pub type Factors32 = spectral::SvdFactors<f32>;
pub type Deformed = spiked::DeformedSample<f64>;
pub type SeedRun = experiment::SeedRun<f32>;
