//! Surrogate modeling for stochastic simulators: a deterministic deep
//! feature map feeding a linear mixture of univariate Gaussian processes,
//! trained by exact-likelihood gradient ascent interleaved with slice
//! sampling, plus the quantile-kriging data pipeline and an
//! NMSE/NLPD/coverage benchmark harness.

pub mod adapters;
pub mod data;
pub mod error;
pub mod exec;
pub mod gp;
pub mod metrics;
pub mod model;
pub mod net;
pub mod quantile;
pub mod sampler;

pub use error::{Error, Result};
