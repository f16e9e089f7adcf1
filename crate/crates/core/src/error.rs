use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error in {function}: {detail}")]
    Domain {
        function: &'static str,
        detail: String,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("length {0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("data norm {data_norm} does not exceed tau1 * delta = {threshold}; zero solution is admissible")]
    TrivialData { data_norm: f64, threshold: f64 },

    #[error("residual {floor} at vanishing alpha exceeds tau2 * delta = {threshold}")]
    NoFeasibleAlpha { floor: f64, threshold: f64 },

    #[error("no residual reaches the threshold {threshold} (minimum {min_residual})")]
    NotReached { threshold: f64, min_residual: f64 },

    #[error("no sign change of the balancing equation on the scan grid ({} points)", scan.len())]
    NoBracket {
        /// `(log10 alpha, lhs, rhs)` at every scan point.
        scan: Vec<(f64, f64, f64)>,
    },

    #[error("solver did not converge after {iterations} iterations (final residual {final_residual})")]
    NonConvergence {
        iterations: usize,
        final_residual: f64,
        /// Final iterate, kept so callers can still inspect the state.
        solution: Vec<f64>,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn domain(function: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            function,
            detail: detail.into(),
        }
    }

    pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
        if expected == got {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected, got })
        }
    }

    /// True for failures that stem from the numerics rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NoBracket { .. }
                | Error::NonConvergence { .. }
                | Error::NoFeasibleAlpha { .. }
                | Error::NotReached { .. }
        )
    }
}
