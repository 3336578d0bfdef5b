use thiserror::Error;

/// Errors raised across the identification pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite activation in scheduling net at layer {layer}")]
    NonFiniteActivation { layer: usize },

    #[error("simulation diverged at step {step} (state norm {norm:e})")]
    Divergence { step: usize, norm: f64 },

    #[error("non-finite stage value in RK4 integration")]
    NonFiniteStage,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(&'static str),

    #[error("singular innovation matrix in covariance recursion at step {step}")]
    SingularUpdate { step: usize },

    #[error("channel {channel} has zero variance")]
    ZeroVariance { channel: usize },

    #[error("optimizer error: {0}")]
    Optimizer(String),

    #[error("all {restarts} restarts diverged (penalties: {penalties:?})")]
    AllRestartsDiverged { restarts: usize, penalties: Vec<f64> },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by the numerics rather than malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteActivation { .. }
                | Error::Divergence { .. }
                | Error::NonFiniteStage
                | Error::NotPositiveDefinite(_)
                | Error::SingularUpdate { .. }
                | Error::Optimizer(_)
                | Error::AllRestartsDiverged { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            got,
        })
    }
}
