use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singular shape: |D| = {d:.3e} is below the singularity threshold")]
    SingularShape { d: f64 },

    #[error("platform connection is not invertible: det = {det:.3e}")]
    NonInvertible { det: f64 },

    #[error("linear system is singular: {0}")]
    SingularSystem(&'static str),

    #[error("non-finite value encountered")]
    NonFinite,

    #[error("degenerate gait phase: sin(phase) = {sin_phase:.3e}")]
    DegenerateGaitPhase { sin_phase: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("integration aborted at t = {t}: {source}")]
    Aborted { t: f64, source: Box<Error> },

    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl Error {
    pub(crate) fn at(self, t: f64) -> Self {
        match self {
            e @ Error::Aborted { .. } => e,
            e => Error::Aborted {
                t,
                source: Box::new(e),
            },
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Time stamp of an aborted integration, if any.
    pub fn abort_time(&self) -> Option<f64> {
        match self {
            Error::Aborted { t, .. } => Some(*t),
            _ => None,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
