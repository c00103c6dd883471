use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("operation requires d1 == d2 (got d1={d1}, d2={d2})")]
    UnequalProbeCounts { d1: u32, d2: u32 },
    #[error("integration blew up (NaN or infinite component) at t={t}")]
    NumericalBlowup { t: f64 },
    #[error("ratio singular at level {level}: state too close to the fixed point")]
    SingularRatio { level: usize },
    #[error("trajectory already converged: nothing to fit")]
    AlreadyConverged,
    #[error("{0}")]
    Precondition(String),
}

/// Model rates and probe counts; the single source of truth for a model
/// configuration. Server count `n` lives in `simulator::SimConfig`.
///
/// Stability requires the offered load `rho = lambda / mu < 1`; construction
/// rejects anything else.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Arrival rate per server.
    pub lambda: f64,
    /// Service rate.
    pub mu: f64,
    /// Retrial rate per orbiting customer.
    pub theta: f64,
    /// Probe count for primary arrivals.
    pub d1: u32,
    /// Probe count for retrials.
    pub d2: u32,
}

impl ModelParams {
    pub fn new(lambda: f64, mu: f64, theta: f64, d1: u32, d2: u32) -> Result<Self, Error> {
        for (name, v) in [("lambda", lambda), ("mu", mu), ("theta", theta)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParams(format!(
                    "{name} must be strictly positive and finite (got {v})"
                )));
            }
        }
        if d1 < 1 || d2 < 1 {
            return Err(Error::InvalidParams(format!(
                "probe counts must be >= 1 (got d1={d1}, d2={d2})"
            )));
        }
        if lambda / mu >= 1.0 {
            return Err(Error::InvalidParams(format!(
                "unstable load: rho = lambda/mu = {} must be < 1",
                lambda / mu
            )));
        }
        Ok(Self { lambda, mu, theta, d1, d2 })
    }

    /// Offered load per server.
    pub fn rho(&self) -> f64 {
        self.lambda / self.mu
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_stable_params() {
        let p = ModelParams::new(1.0, 5.0, 2.0, 2, 1).unwrap();
        assert_eq!(p.rho(), 0.2);
    }

    #[test]
    fn rejects_unstable_load() {
        assert!(ModelParams::new(5.0, 5.0, 2.0, 1, 1).is_err());
        assert!(ModelParams::new(6.0, 5.0, 2.0, 1, 1).is_err());
    }

    #[test]
    fn rejects_nonpositive_rates_and_zero_probes() {
        assert!(ModelParams::new(0.0, 5.0, 2.0, 1, 1).is_err());
        assert!(ModelParams::new(1.0, -5.0, 2.0, 1, 1).is_err());
        assert!(ModelParams::new(1.0, 5.0, f64::INFINITY, 1, 1).is_err());
        assert!(ModelParams::new(1.0, 5.0, 2.0, 0, 1).is_err());
        assert!(ModelParams::new(1.0, 5.0, 2.0, 1, 0).is_err());
    }
}
