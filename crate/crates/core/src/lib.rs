//! Simulation and run-time assurance toolkit for autonomous spacecraft inspection.
//!
//! The crate propagates Clohessy-Wiltshire relative motion, filters arbitrary
//! primary controllers through an active set invariance filter built from six
//! control barrier functions, and runs open- and closed-loop inspection
//! experiments with full trajectory logging.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod harness;
pub mod inspection;
pub mod qp;
pub mod rta;
pub mod safety;

pub use dynamics::{ControlVector, DynamicsParams, RelativeState};
pub use error::{Error, Result};
