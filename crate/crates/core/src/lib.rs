//! Mean-field analysis of the retrial supermarket model: randomized load
//! balancing over n servers where a primary arrival probes d1 servers, a
//! blocked customer parks in a per-server retrial orbit, and each orbiting
//! customer periodically probes d2 servers for an idle one.
//!
//! The crate computes the super-exponential fixed point of the mean-field
//! equations, integrates the transient ODE system, evaluates expected
//! sojourn times and exponential-convergence diagnostics, and cross-checks
//! everything against a discrete-event simulation of the finite-n system.

pub mod fixedpoint;
pub mod lyapunov;
pub mod meanfield;
pub mod params;
pub mod simulator;
pub mod sojourn;

pub use params::{Error, ModelParams};
