//! Evaporation of a spherical droplet in an ambient air flow.
//!
//! The gas phase is solved on a fixed rescaled shell `1 <= r <= r_out`
//! around the droplet. Temperature and vapor density obey convection–diffusion
//! equations with a Hertz–Knudsen flux condition on the droplet surface; the
//! radius follows from the surface-integrated evaporation rate.

pub mod discretization;
pub mod error;
pub mod fixedpoint;
pub mod flowfields;
pub mod geometry;
pub mod oracle;
pub mod physics;
pub mod sparse;
pub mod timeloop;
pub mod verify;

pub use error::{Error, Result};
