//! Identification of per-pipe roughnesses and unmeasured nodal heads in a
//! water distribution network from steady-state measurement sets.
//!
//! The crate provides a Newton-Raphson baseline and a second-order tensor
//! search direction in Hadamard form, the analytic factorization layer built
//! on degenerate conic sections, a multi-start calibration driver and a
//! steady-state forward solver for generating consistent measurements.

pub mod assembly;
pub mod benchmark;
pub mod campaign;
pub mod conic;
pub mod error;
pub mod factorization;
pub mod flow;
pub mod forward;
pub mod network;
pub mod newton;
pub mod report;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
