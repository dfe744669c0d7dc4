//! Numerical laboratory for deformed i.i.d. random matrices.
//!
//! The deterministic side solves the scalar self-consistent equation for a
//! deformation `Λ`, builds the matrix solution `M(w)` of the Hermitized
//! Dyson equation, the density and its quantiles, the two-body stability
//! eigentriples, regularized observables and multi-resolvent deterministic
//! chains. The random side samples `X`, Hermitizes `X + Λ` and runs Monte
//! Carlo checks against those predictions.

pub mod chains;
pub mod cli;
pub mod ensemble;
pub mod error;
pub mod linalg;
pub mod mde;
pub mod stability;
pub mod verify;

pub use error::{EthError, Result};
pub use linalg::{CMat, c64};
pub use mde::{Deformation, DensityProfile, MdeSolution, SpectralPoint};
