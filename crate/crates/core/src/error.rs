use thiserror::Error;

/// Errors surfaced by parameter validation and estimation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A constructor or operation received a value outside its stated range.
    #[error("invalid parameter {name}: {value} ({reason})")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    /// Z-basis gain vanished: no clicks at all, error rate undefined.
    #[error("degenerate channel: total Z-basis gain is zero")]
    NoSignal,

    /// Single-photon statistics could not be estimated (Y1 bound is zero).
    #[error("decoy estimation failure: {0}")]
    EstimationFailure(&'static str),

    /// A Monte Carlo run accepted no trials, so the requested frequency is undefined.
    #[error("insufficient sampling: no accepted trials")]
    InsufficientSampling,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, value: f64, reason: &'static str) -> Error {
    Error::InvalidParameter {
        name,
        value,
        reason,
    }
}
