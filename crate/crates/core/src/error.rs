//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("taxonomy mismatch: {0}")]
    TaxonomyMismatch(String),

    #[error("no class directories found under {0}")]
    NoClasses(PathBuf),

    #[error("class '{class}' has {count} records, need at least {min}")]
    ClassTooSmall {
        class: String,
        count: usize,
        min: usize,
    },

    #[error("class '{class}' has {count} records, above balance target {target} (downsampling unsupported)")]
    ClassOverTarget {
        class: String,
        count: usize,
        target: usize,
    },

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("cannot normalize a (near-)zero vector (norm = {0:.3e})")]
    ZeroNorm(f64),

    #[error("embedding rows must be unit-norm, row {row} has norm {norm}")]
    UnnormalizedRows { row: usize, norm: f64 },

    #[error("batch of {0} rows has no negatives")]
    BatchTooSmall(usize),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("non-finite loss at {phase} step {step} (epoch {epoch})")]
    Diverged {
        phase: &'static str,
        epoch: usize,
        step: usize,
    },

    #[error("missing artifact for stage '{stage}': {path}")]
    MissingArtifact { stage: String, path: PathBuf },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("manifest parse error at line {line}: {msg}")]
    ManifestParse { line: usize, msg: String },

    #[error("run directory is locked by another process: {0}")]
    Locked(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}
