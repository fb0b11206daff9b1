//! Trajectory optimization for control-affine systems with convex control
//! cost: an iterative LQR solver, a dense full-space SQP solver, a scalar
//! characteristics integrator and a multi-start harness for studying how the
//! time step of the Euler transcription affects the set of local minima.

pub mod characteristics;
pub mod cli;
pub mod config;
pub mod cost;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod ilqr;
pub mod solver;
pub mod sqp;

pub use error::{Error, Result};
