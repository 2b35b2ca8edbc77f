//! Crate-wide error type.
//!
//! Validation failures (bad configs, malformed manifests, out-of-range
//! arguments) are recoverable and carry enough context to name the offending
//! input. Contract violations indicate caller bugs and are produced by the
//! same type so library entry points stay uniform.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("duplicate view {view} selected at step {step}")]
    DuplicateView { view: usize, step: usize },

    #[error("episode already complete at t = T = {t}")]
    EpisodeComplete { t: usize },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("schema error: {0}")]
    Schema(String),

    /// A non-finite loss surfaced during training; the offending stage and
    /// epoch are reported so runs can be triaged from logs alone.
    #[error("numeric divergence at stage {stage}, epoch {epoch}")]
    Divergence { stage: u8, epoch: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
