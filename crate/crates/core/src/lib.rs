//! Certified numerical boundary stabilization for linear discrete-velocity
//! kinetic models on the unit cube.
//!
//! The pipeline is: build a [`model::KineticModel`], decompose its collision
//! matrix ([`structure::decompose`]), issue a [`certify::StabilityCertificate`]
//! for a grid spacing, then advance fields with [`scheme::Stepper`] under a
//! [`boundary::BoundaryLaw`] while tracking the diagnostics in [`lyapunov`].

pub mod boundary;
pub mod cli;
pub mod certify;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod lyapunov;
pub mod model;
pub mod scheme;
pub mod structure;

pub use error::{Error, Result};
