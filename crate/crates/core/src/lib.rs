//! Cost-sensitive top-2 smooth loss and the machinery to study it: a small
//! residual network with exact gradients and Adam, class-balanced sampling,
//! bagging, transfer between domains, evaluation metrics, 16-bit raster
//! ingestion, synthetic data, and a reproducible experiment harness.

pub mod checkpoint;
pub mod error;
pub mod experiment;
pub mod ingest;
pub mod loss;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod report;
pub mod sampler;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
pub use matrix::Matrix;
