//! Expected sojourn time from the fixed point.
//!
//! An arriving customer that finds k customers in the probed orbit is
//! "primary" with probability lambda/(lambda + k*theta) and "retrying" with
//! probability k*theta/(lambda + k*theta); the total expected sojourn time
//! mixes the conditional times with those weights over all k.
//!
//! The conditional formulas are evaluated exactly as published. The
//! bracketed probability masses do not cover every probe outcome, and below
//! the joint-monotonicity threshold K the tail differences can be negative;
//! such terms are passed through signed (never clamped) and flagged.

use crate::fixedpoint::{delta_sequence, powi, solve_eta_star, FixedPoint, DEFAULT_ETA_TOL};
use crate::params::{Error, ModelParams};
use serde::{Deserialize, Serialize};

/// Default series truncation budget.
pub const DEFAULT_K_SUM: usize = 512;
/// Default stop-threshold on the k-th summand.
pub const DEFAULT_TERM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SojournTable {
    /// E[T^(P)(k)] for k = 0..=K'.
    pub t_primary: Vec<f64>,
    /// E[T^(R)(k)] for k = 1..=K' (the k=0 case is identically 0 and not stored).
    pub t_retrial: Vec<f64>,
    /// Total expected sojourn time.
    pub total: f64,
    /// Truncation budget the series was run with.
    pub k_sum: usize,
    /// Magnitude of the last included summand.
    pub tail_bound: f64,
    /// True when the budget ran out before a summand fell below `term_tol`.
    pub truncated_by_budget: bool,
    /// True when any conditional term came out negative (possible below the
    /// joint-monotonicity threshold).
    pub has_negative_terms: bool,
}

/// E[T^(R)(k)] for k >= 1:
/// (1/mu) * ([pi_I[k]]^d2 - [pi_I[k+1]]^d2) / (1 - ([pi_W[k]]^d2 - [pi_W[k+1]]^d2)).
/// The denominator is a difference of values in [0,1] subtracted from 1, so
/// it stays positive.
pub fn sojourn_retrial(fp: &FixedPoint, params: &ModelParams, k: usize) -> f64 {
    assert!(k >= 1 && k < fp.k_max, "need 1 <= k <= k_max-1");
    let d2 = params.d2;
    let num = powi(fp.pi_i[k], d2) - powi(fp.pi_i[k + 1], d2);
    let den = 1.0 - (powi(fp.pi_w[k], d2) - powi(fp.pi_w[k + 1], d2));
    num / (params.mu * den)
}

/// E[T^(P)(k)]:
/// (1/mu) * ([pi_I[k]]^d1 - [pi_I[k+1]]^d1)
/// + ([pi_W[k]]^d1 - [pi_W[k+1]]^d1) * E[T^(R)(k+1)].
pub fn sojourn_primary(fp: &FixedPoint, params: &ModelParams, k: usize) -> f64 {
    assert!(k + 2 <= fp.k_max, "need k <= k_max-2");
    let d1 = params.d1;
    let service = (powi(fp.pi_i[k], d1) - powi(fp.pi_i[k + 1], d1)) / params.mu;
    let blocked = powi(fp.pi_w[k], d1) - powi(fp.pi_w[k + 1], d1);
    service + blocked * sojourn_retrial(fp, params, k + 1)
}

/// Total expected sojourn time:
/// sum_k [ lambda/(lambda+k*theta) * E[T^(P)(k)]
///       + k*theta/(lambda+k*theta) * E[T^(R)(k)] ],
/// stopped at the first summand below `term_tol` (that summand is included
/// and reported as `tail_bound`) or when `k_sum` terms have been taken.
pub fn expected_sojourn(
    fp: &FixedPoint,
    params: &ModelParams,
    k_sum: usize,
    term_tol: f64,
) -> SojournTable {
    let budget = k_sum.min(fp.k_max.saturating_sub(2));
    let mut table = SojournTable {
        t_primary: Vec::new(),
        t_retrial: Vec::new(),
        total: 0.0,
        k_sum,
        tail_bound: 0.0,
        truncated_by_budget: true,
        has_negative_terms: false,
    };
    for k in 0..=budget {
        let tp = sojourn_primary(fp, params, k);
        let tr = if k >= 1 { sojourn_retrial(fp, params, k) } else { 0.0 };
        table.t_primary.push(tp);
        if k >= 1 {
            table.t_retrial.push(tr);
        }
        if tp < 0.0 || tr < 0.0 {
            table.has_negative_terms = true;
        }
        let kt = k as f64 * params.theta;
        let summand = (params.lambda * tp + kt * tr) / (params.lambda + kt);
        table.total += summand;
        table.tail_bound = summand.abs();
        if summand.abs() < term_tol {
            table.truncated_by_budget = false;
            break;
        }
    }
    table
}

/// Equal-d specialization: the same series rewritten in the delta sequence,
///
/// E[T^(R)(k)] = rho * (delta_{k-1}^d/(k*theta) - delta_k^d/((k+1)*theta))
///               / (1 - (delta_k^d - delta_{k+1}^d))
/// E[T^(P)(0)] = (1/mu)*(eta_star^d - (lambda/theta)*delta_0^d)
///               + rho*(delta_0^d - delta_1^d)*(delta_0^d/theta - delta_1^d/(2*theta))
///                 / (1 - (delta_1^d - delta_2^d))
/// E[T^(P)(k)] = rho*(delta_{k-1}^d/(k*theta) - delta_k^d/((k+1)*theta))
///               + rho*(delta_k^d - delta_{k+1}^d)
///                 * (delta_k^d/((k+1)*theta) - delta_{k+1}^d/((k+2)*theta))
///                 / (1 - (delta_{k+1}^d - delta_{k+2}^d)),
///
/// mixed with the same weights and truncation rule as `expected_sojourn`.
pub fn expected_sojourn_equal_d(params: &ModelParams, k_sum: usize) -> Result<f64, Error> {
    if params.d1 != params.d2 {
        return Err(Error::UnequalProbeCounts { d1: params.d1, d2: params.d2 });
    }
    let d = params.d1;
    let (lam, mu, th) = (params.lambda, params.mu, params.theta);
    let rho = params.rho();
    let eta_star = solve_eta_star(params, DEFAULT_ETA_TOL);
    let delta = delta_sequence(params, eta_star, k_sum + 3);
    let dp: Vec<f64> = delta.iter().map(|&x| powi(x, d)).collect();

    let retrial = |k: usize| -> f64 {
        let num = dp[k - 1] / (k as f64 * th) - dp[k] / ((k + 1) as f64 * th);
        rho * num / (1.0 - (dp[k] - dp[k + 1]))
    };
    let mut total = 0.0;
    for k in 0..=k_sum {
        let tp = if k == 0 {
            (powi(eta_star, d) - lam / th * dp[0]) / mu
                + rho * (dp[0] - dp[1]) * (dp[0] / th - dp[1] / (2.0 * th))
                    / (1.0 - (dp[1] - dp[2]))
        } else {
            rho * (dp[k - 1] / (k as f64 * th) - dp[k] / ((k + 1) as f64 * th))
                + rho * (dp[k] - dp[k + 1])
                    * (dp[k] / ((k + 1) as f64 * th) - dp[k + 1] / ((k + 2) as f64 * th))
                    / (1.0 - (dp[k + 1] - dp[k + 2]))
        };
        let tr = if k >= 1 { retrial(k) } else { 0.0 };
        let kt = k as f64 * th;
        let summand = (lam * tp + kt * tr) / (lam + kt);
        total += summand;
        if summand.abs() < DEFAULT_TERM_TOL {
            break;
        }
    }
    Ok(total)
}
