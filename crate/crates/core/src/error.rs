use std::path::PathBuf;

use thiserror::Error;

use crate::fit::Checkpoint;

/// Errors produced anywhere in the fitting pipeline.
#[derive(Debug, Error)]
pub enum NpsError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("unknown corner {corner} referenced by face {face}")]
    UnknownCorner { face: u32, corner: u32 },

    #[error("unknown patch id {0}")]
    UnknownPatch(u32),

    #[error("degenerate normal at sample {0}")]
    DegenerateNormal(usize),

    #[error("face {0} has no samples")]
    EmptyPatch(u32),

    #[error("invalid layout: {0}")]
    InvalidLayout(String),

    #[error("face {face} has a zero-length boundary edge {edge}")]
    ZeroLengthEdge { face: u32, edge: usize },

    #[error("point ({0}, {1}) lies outside the polygon domain")]
    OutsideDomain(f64, f64),

    #[error("point ({0}, {1}) lies on the domain boundary; inset it before differentiating")]
    OnBoundary(f64, f64),

    #[error("degenerate parameterization: |J_u x J_v| = {0:e}")]
    DegenerateJacobian(f64),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("layouts in the collection do not share one topology: {0}")]
    LayoutMismatch(String),

    #[error("unknown latent code id {0}")]
    UnknownCode(usize),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    /// The loss went non-finite; carries the last checkpoint whose loss was finite.
    #[error("loss became non-finite at iteration {iteration} ({term})")]
    Diverged {
        iteration: usize,
        term: String,
        last_good: Box<Checkpoint>,
    },
}

impl NpsError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NpsError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, NpsError>;
