use thiserror::Error;

/// Errors raised by the numerical routines in this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    /// Adaptive quadrature ran out of subdivisions. The partial estimate and
    /// its error bound are kept so callers can decide whether to accept it.
    #[error("quadrature did not converge after {subdivisions} subdivisions (estimate {estimate:e}, error {error:e})")]
    Quadrature {
        estimate: f64,
        error: f64,
        subdivisions: usize,
    },

    #[error("selection too rare: {accepted} acceptances in {attempts} attempts (rate {rate:e})")]
    SelectionTooRare {
        attempts: usize,
        accepted: usize,
        rate: f64,
    },

    #[error("misuse: {0}")]
    Misuse(String),

    #[error("unsupported: {0}")]
    Capability(String),

    #[error("chain stuck: {consecutive} consecutive rejections at step {step}")]
    StuckChain { step: usize, consecutive: usize },

    #[error("grid error: {0}")]
    Grid(String),

    #[error("degenerate posterior: {0}")]
    Degenerate(String),

    #[error("incompatible supports: {0}")]
    IncompatibleSupport(String),

    #[error("replication {index}: {source}")]
    Replication { index: usize, source: Box<Error> },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// True for failures of the numerical machinery (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        if let Error::Replication { source, .. } = self {
            return source.is_numerical();
        }
        matches!(
            self,
            Error::Quadrature { .. }
                | Error::SelectionTooRare { .. }
                | Error::StuckChain { .. }
                | Error::Grid(_)
                | Error::Degenerate(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
