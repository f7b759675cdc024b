use thiserror::Error;

/// Errors raised by problem construction, the solvers, and file handling.
#[derive(Debug, Error)]
pub enum Error {
    /// A block or vector does not fit the coupling graph.
    #[error("structural error at block (j={j}, i={i}): {msg}")]
    Structural { j: usize, i: usize, msg: String },

    #[error("structural error: primal block {i} has no constraint neighbors")]
    EmptyNeighborhood { i: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid objective for block {i}: {msg}")]
    InvalidObjective { i: usize, msg: String },

    /// Inner Newton solve did not reach its tolerance. Never expected for valid input.
    #[error("inner solve did not converge (final gradient norm {grad_norm:e})")]
    Convergence { grad_norm: f64 },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("constraint block {j} has zero step weight")]
    DegenerateWeight { j: usize },

    #[error("rank deficiency: {0}")]
    Rank(String),

    #[error("unsupported instance: {0}")]
    Unsupported(String),

    #[error("a reference solution is required: {0}")]
    MissingReference(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    /// A message was sent between two nodes that share no edge.
    #[error("locality violation: message from {from} to {to} crosses no edge")]
    Locality { from: String, to: String },

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical machinery, as opposed to bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Convergence { .. }
                | Error::Numeric(_)
                | Error::Rank(_)
                | Error::DegenerateWeight { .. }
                | Error::Invariant(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
