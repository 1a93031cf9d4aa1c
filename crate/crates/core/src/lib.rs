//! Open-system model of two solid-state emitters with cooperative decay:
//! Lindblad generators, photon correlators, two-photon interference,
//! detector response and fits.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod correlators;
pub mod density;
pub mod dynamics;
pub mod emission;
pub mod error;
pub mod fit;
pub mod instrument;
pub mod interference;
pub mod operators;
pub mod propagation;

pub use density::DensityOperator;
pub use dynamics::{build_generator, DriveProtocol, EmissionModel, EmitterParams, Liouvillian, Pulse};
pub use error::{Error, Result};
