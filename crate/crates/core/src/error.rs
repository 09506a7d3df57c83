use thiserror::Error;

/// Errors raised by the macro model.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CimError {
    #[error("{what} = {value} is outside [{min}, {max}]")]
    OutOfRange {
        what: &'static str,
        value: i64,
        min: i64,
        max: i64,
    },

    #[error("expected {expected} {what}, got {actual}")]
    WrongLength {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("bit-line fell to {voltage:.4} V, below the MAC headroom floor {floor:.4} V")]
    HeadroomExceeded { voltage: f64, floor: f64 },

    #[error("MAC phase requires precharged bit-lines")]
    NotPrecharged,

    #[error("readout requested before the MAC phase completed")]
    ReadoutBeforeMac,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("matrix needs {needed} engine passes but the macro holds {capacity} and streaming is disabled")]
    TooManyColumns { needed: usize, capacity: usize },

    #[error("target MAC value {0} cannot be realized by any 64-row pattern")]
    UnrealizableTarget(i64),

    #[error("transfer curve does not cover enough contiguous codes: {0}")]
    InsufficientCoverage(String),

    #[error("invalid configuration: {field}: {invariant}")]
    Validation {
        field: String,
        invariant: String,
    },
}

pub type Result<T, E = CimError> = std::result::Result<T, E>;
