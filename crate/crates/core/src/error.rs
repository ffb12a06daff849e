use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("empty vector where a non-empty one is required")]
    Empty,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Non-stationary Pareto solution whose integrated direction still has zero length.
    #[error("degenerate gradient sum: cannot rescale a zero direction")]
    DegenerateSum,

    #[error("non-finite loss at iteration {iteration} (parameter norms: {param_norms:?})")]
    NumericalAbort {
        iteration: u64,
        param_norms: Vec<f64>,
    },

    #[error("loss became non-finite at offset {offset}; reduce the scan radius below {radius}")]
    RadiusTooLarge { offset: f64, radius: f64 },

    #[error("seed {seed}: {source}")]
    Seed {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// The innermost error, looking through per-seed wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Seed { source, .. } => source.root(),
            e => e,
        }
    }
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
