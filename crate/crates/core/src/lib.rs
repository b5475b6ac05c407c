//! Self-supervised representation learning for small grayscale image corpora:
//! deterministic data pipeline, four pretraining objectives over pluggable
//! encoders, linear-probe / fine-tune evaluation, and class-activation maps.

pub mod config;
pub mod data;
pub mod embed;
pub mod error;
pub mod experiment;
pub mod nn;
pub mod plot;
pub mod rng;
pub mod saliency;
pub mod ssl;
pub mod train;

pub use error::{Error, Result};
