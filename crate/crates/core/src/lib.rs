//! Reduced order models for hyperbolic conservation laws built from
//! transformed solution snapshots and dynamic mode decomposition.
//!
//! The pipeline: [`solver`] produces snapshots, [`registration`] fits
//! displacement fields aligning them to a reference, [`transform`] builds
//! transformed snapshots and inverse maps, [`tsdmd`] trains DMD models
//! ([`dmd`]) for both and recomposes them, and [`metrics`] evaluates errors.

pub mod dmd;
pub mod error;
pub mod experiment;
pub mod io;
pub mod mesh;
pub mod metrics;
pub mod optim;
pub mod registration;
pub mod solver;
pub mod transform;
pub mod tsdmd;

pub use error::{Error, Result};
