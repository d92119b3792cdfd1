//! Stability measures for equilibria of real dynamical systems.
//!
//! Given a stable Jacobian `A`, this crate computes, verifies and relates
//! five quantities:
//!
//! - the spectral abscissa `alpha(A)`;
//! - harmonic dynamical stability: the inverse of the peak resolvent norm
//!   over the imaginary axis, together with the resonant frequency;
//! - the complex stability radius, with an explicit rank-one destabilizing
//!   matrix built from the resonant singular vectors;
//! - the real stability radius, by the two-parameter level-set formula with
//!   a certified real rank-two perturbation;
//! - white-noise dynamical/structural stability: the inverse norm of the
//!   inverse lifted operator `C -> AC + CA^t`, with the minimal internal
//!   white-noise perturbation that pushes the second-moment dynamics to the
//!   stability boundary.
//!
//! The `sde` module integrates the corresponding Ito equations so that every
//! operator-level claim can be checked against ensemble statistics, and the
//! `experiments` module packages the reproducible studies used by the
//! `stabkit` command line tool.

pub mod config;
pub mod destabilizer;
pub mod error;
pub mod experiments;
pub mod io;
pub mod lifted;
pub mod linalg;
pub mod report;
pub mod resolvent;
pub mod sde;

pub use config::Tolerances;
pub use error::{Error, Result};
pub use linalg::{CMatrix, CovarianceMatrix, RealMatrix, Spectrum};
