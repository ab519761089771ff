use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("{what} did not converge after {iterations} iterations")]
    NumericalFailure {
        what: &'static str,
        iterations: usize,
    },

    #[error("no admissible matrix after {attempts} attempts")]
    Rejection { attempts: usize },

    #[error("step size underflow at t = {t} (h = {h})")]
    StepSizeUnderflow { t: f64, h: f64 },

    #[error("overflow in {0}")]
    Overflow(&'static str),

    #[error("no confusable system exists (kernel dimension {kernel_dim} of {dim})")]
    NoWitness { kernel_dim: usize, dim: usize },

    #[error("argument {0} is outside the domain of the principal Lambert W branch")]
    WDomain(f64),

    #[error("subgroup split needs at least {needed} samples, got {found}")]
    SubgroupTooSmall { needed: usize, found: usize },

    #[error("degenerate test: both samples have zero variance")]
    DegenerateTest,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    /// Numerical errors are recorded per sample by the harness; everything
    /// else aborts.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NumericalFailure { .. }
                | Error::StepSizeUnderflow { .. }
                | Error::Overflow(_)
                | Error::WDomain(_)
                | Error::DegenerateTest
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_) | Error::Csv(_))
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Config(e.to_string())
    }
}
