use thiserror::Error;

/// Errors raised by the simulation and analysis routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("stationary state is not unique (null space dimension {multiplicity})")]
    DegenerateSteadyState { multiplicity: usize },
    #[error("time step {dt:e} ns cannot be resolved at t = {t:e} ns")]
    StepUnderflow { t: f64, dt: f64 },
    #[error("quantity `{0}` has a vanishing denominator")]
    ZeroDenominator(&'static str),
    #[error("grids do not match: {0}")]
    GridMismatch(String),
    #[error("grid spacing {spacing:e} ns is coarser than {limit:e} ns")]
    GridTooCoarse { spacing: f64, limit: f64 },
    #[error("integration window {window} ns overlaps neighbouring peaks (period {period} ns)")]
    WindowOverlap { window: f64, period: f64 },
    #[error("non-positive value {value:e} at t = {t} ns inside the fit window")]
    NonPositive { t: f64, value: f64 },
    #[error("{0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
