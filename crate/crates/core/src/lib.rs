//! Light-weight portrait segmentation: factorized bottleneck blocks, a
//! single-convolution decoder, a boundary-weighted loss, a static cost
//! analyzer, and the data, training and benchmarking machinery around them.

pub mod cli;
pub mod config;
pub mod cost;
pub mod data;
pub mod error;
pub mod loss;
pub mod model;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
