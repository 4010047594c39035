//! Atom detection at the bottom of a spectrum.
//!
//! The crate evaluates Laplace transforms of probability measures in the log
//! domain, estimates the mass of an atom at the support infimum from
//! time-averaged partition-function quotients, realizes the measure's renewal
//! transform as an M/G/∞ queue, and applies both to rank-one perturbations and
//! small generalized spin-boson models.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod laplace;
pub mod measure;
pub mod quad;
pub mod rankone;
pub mod renewal;
pub mod rng;
pub mod spinboson;
pub mod stats;
pub mod wiener;

pub use error::{Error, Result};
pub use laplace::{LaplaceEvaluator, TiltedStats};
pub use measure::{Atom, Density, DensityKind, InverseMoment, ProbabilityMeasure};

/// Crate version string embedded in reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
