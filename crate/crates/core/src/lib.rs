//! Dual-branch forecaster: data pipeline, model, training and evaluation.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod eval;
mod error;
pub mod model;
pub mod params;
pub mod synthetic;
pub mod train;
pub mod verify;

pub use config::ModelConfig;
pub use error::{DataError, DtafError, Result};
pub use model::{Mode, NormStats};
pub use params::DtafParams;
pub use dtaf_tensor::DropoutKey;
