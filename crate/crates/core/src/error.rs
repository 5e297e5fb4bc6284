use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("singular matrix (pivot magnitude {pivot:.3e})")]
    SingularMatrix { pivot: f64 },

    #[error("iteration did not converge after {iterations} iterations (last change {last_change:.3e})")]
    NonConvergence { iterations: usize, last_change: f64 },

    #[error("state norm {norm:.3e} exceeded cap {cap:.1e} at step {step}")]
    StateBlowup { step: usize, norm: f64, cap: f64 },

    #[error("non-finite gradient at step {step}")]
    NonFiniteGradient { step: usize },

    #[error("sampled arm {arm} has zero probability")]
    ZeroProbabilitySampled { arm: usize },

    #[error("empty parameter grid")]
    EmptyGrid,

    #[error("regret values must be positive for a log-log fit (got {value})")]
    NonPositiveRegret { value: f64 },

    #[error("perturbation grew by factor {growth:.3e} at offset {step}")]
    Divergence { step: usize, growth: f64 },

    #[error("estimated decay factor {rho:.4} is not below one")]
    NotContractive { rho: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    /// True for failures caused by numerical blow-up rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::StateBlowup { .. }
                | Error::NonFiniteGradient { .. }
                | Error::Divergence { .. }
                | Error::NotContractive { .. }
                | Error::SingularMatrix { .. }
                | Error::NonConvergence { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
