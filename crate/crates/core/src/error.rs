use std::path::PathBuf;

use thiserror::Error;

use crate::backends::Operation;

/// Failure raised by a model backend or by the layers wrapped around it.
#[derive(Debug, Error)]
pub enum BackendError {
    #[error("input error in {op}: {message}")]
    Input { op: Operation, message: String },

    #[error("fixture miss for {op} (digest {digest})")]
    FixtureMiss { op: Operation, digest: String },

    #[error("replay miss for {op} (digest {digest}); record the run first")]
    ReplayMiss { op: Operation, digest: String },

    #[error("{op} failed after {attempts} attempt(s): {message}")]
    Remote {
        op: Operation,
        attempts: u32,
        message: String,
    },

    #[error("malformed {op} response: {message}")]
    Malformed { op: Operation, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("no backend configured for {0}")]
    Unrouted(Operation),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Numeric shape or domain error from the attention kernels.
#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid input: {0}")]
    Input(String),
}

/// Error from one interpretation of one sample.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{step}: {source}")]
    Backend {
        step: &'static str,
        #[source]
        source: BackendError,
    },

    #[error("no noun entities extracted from sample {0}")]
    NoCandidates(String),

    #[error("{0}")]
    Input(String),

    #[error("could not parse model reply at {step}: {raw:?}")]
    Parse { step: &'static str, raw: String },

    #[error(transparent)]
    Kernel(#[from] KernelError),

    #[error("prompt template {name}: {message}")]
    Template { name: String, message: String },
}

impl PipelineError {
    pub(crate) fn backend(step: &'static str) -> impl FnOnce(BackendError) -> Self {
        move |source| Self::Backend { step, source }
    }
}
