use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point with norm {norm} is below the injectivity threshold {threshold}")]
    BelowInjectivityThreshold { norm: f64, threshold: f64 },

    #[error("projector derivative of order {0} is not supported (max 3)")]
    UnsupportedOrder(usize),

    #[error("derivative order {order} exceeds the grid budget {max}")]
    OrderTooHigh { order: usize, max: usize },

    #[error("mollification parameter must be non-negative, got {0}")]
    NegativeDelta(f64),

    #[error("shift {h} is not a lattice multiple of the grid spacing {spacing}")]
    NonLatticeShift { h: f64, spacing: f64 },

    #[error("viscosity {0} outside [0, 1)")]
    EpsilonOutOfRange(f64),

    #[error("non-finite values at t = {t} (step {step})")]
    NonFinite { t: f64, step: usize },

    #[error("solution left the tubular neighbourhood at t = {t} (step {step}): {source}")]
    ConstraintEscape {
        t: f64,
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("mollified data leaves the tube: sup distance {sup_distance} >= {limit}")]
    OutsideTube { sup_distance: f64, limit: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for the failures that mean the trajectory itself broke down.
    pub fn is_numerical_abort(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::ConstraintEscape { .. })
    }
}
