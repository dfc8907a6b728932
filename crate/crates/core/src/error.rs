use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Cholesky pivot was not strictly positive.
    #[error("matrix is not positive definite (pivot {pivot}{})", bin_suffix(*.bin))]
    NotPositiveDefinite { pivot: usize, bin: Option<usize> },

    #[error("eigen decomposition did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },

    /// Normalization by a (near) zero reference entry.
    #[error("degenerate reference entry (|ref| = {magnitude:e}){}", bin_suffix(*.bin))]
    DegenerateReference { magnitude: f64, bin: Option<usize> },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("signal too short: {samples} samples for a window of {window}")]
    EmptyTensor { samples: usize, window: usize },

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("malformed file: {0}")]
    Format(String),
}

fn bin_suffix(bin: Option<usize>) -> String {
    match bin {
        Some(k) => format!(" at frequency bin {k}"),
        None => String::new(),
    }
}

impl Error {
    /// Attaches a frequency bin index to numerical errors that carry one.
    pub fn at_bin(self, k: usize) -> Self {
        match self {
            Error::NotPositiveDefinite { pivot, .. } => Error::NotPositiveDefinite { pivot, bin: Some(k) },
            Error::DegenerateReference { magnitude, .. } => {
                Error::DegenerateReference { magnitude, bin: Some(k) }
            }
            other => other,
        }
    }

    /// True for errors caused by numerics rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. } | Error::NoConvergence { .. } | Error::DegenerateReference { .. }
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            Error::Io(e.to_string())
        } else {
            Error::Config(e.to_string())
        }
    }
}
