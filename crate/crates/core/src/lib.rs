//! Simulation and estimation toolkit for a two-detector pseudo-spin pointer.
//!
//! A weak coupling between a two-level system and a Gaussian meter is followed
//! by post-selection; the meter is then read out by splitting its distribution
//! into two half-space bins and counting photons on each side. The contrast
//! `(N+ - N-)/(N+ + N-)` carries the information about the post-selection angle.
//!
//! Modules:
//! - [`model`]: exact and first-order quantum mechanics of the measurement chain
//! - [`optics`]: spin Hall effect of light setup mapped onto the abstract model
//! - [`estimation`]: sensitivity, Fisher information, Cramér-Rao bound, angle estimation
//! - [`montecarlo`]: seeded photon-counting simulation
//! - [`baseline`]: pixelated-detector reference pipeline
//! - [`harness`]: config-driven experiment runner behind the `pseudospin` binary

// guards written as `!(x > 0.0)` also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod model;
pub mod montecarlo;
pub mod optics;
pub mod quadrature;

pub use error::{Error, Result};
