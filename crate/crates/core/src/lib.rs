//! Simulation and estimation of the ⁸⁸Sr⁺ D₅/₂ quadrupole moment from
//! dynamically decoupled Ramsey experiments.
//!
//! The crate is layered bottom-up: [`spin`] provides angular-momentum
//! algebra, [`atom`] and [`noise`] turn physical parameters into level
//! shifts, [`sequence`] runs pulse programs on the eight-level
//! [`state::StateVector`], [`sampler`] produces shot records, and
//! [`estimator`] extracts phases, frequencies and Θ from them.
//! [`scenario`] ties everything together for whole campaigns.

pub mod atom;
pub mod constants;
pub mod error;
pub mod estimator;
pub mod noise;
pub mod sampler;
pub mod scenario;
pub mod sequence;
pub mod spin;
pub mod state;

pub use error::{Error, ErrorKind, Result};
