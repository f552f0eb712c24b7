use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A dense O(n^3) routine was asked to run above its size guard.
    #[error("{op}: dimension {n} exceeds dense guard of {max}")]
    SizeGuard {
        op: &'static str,
        n: usize,
        max: usize,
    },

    #[error("matrix is singular to working precision: {0}")]
    Singular(String),

    /// Exact gradient formulas are only valid on the open unit cube.
    #[error("weights must lie strictly inside (0, 1): t[{index}] = {value}")]
    NotInterior { index: usize, value: f64 },

    #[error("optimizer produced a non-finite iterate at iteration {iteration}")]
    Diverged { iteration: usize, last_t: Vec<f64> },

    #[error("CSV error at row {row}, column {column}: {message}")]
    Csv {
        row: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
