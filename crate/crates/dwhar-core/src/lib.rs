//! Numerical core for a modality-aware activity-recognition model over
//! multi-sensor wearable time series: reverse-mode tensors, the layer stack,
//! training loop, data pipeline, and evaluation metrics.

pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod training;
pub mod util;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor};
