//! Fixed point of the mean-field equations.
//!
//! The stationary fraction of idle servers `eta_star` is the unique root in
//! (0,1) of `lambda*x^d1 + mu*x - mu = 0`; the busy-tail sequence follows the
//! delta recursion `delta_k = rho*delta_{k-1}^d1 + rho*(lambda/(k*theta) *
//! delta_{k-1}^d1)^(d1/d2)` and decays super-exponentially, so it underflows
//! quickly and is clamped to exact zero below `UNDERFLOW_FLOOR`.

use crate::params::{Error, ModelParams};
use serde::{Deserialize, Serialize};

/// Default truncation level for the tail sequences.
pub const DEFAULT_K_MAX: usize = 64;
/// Default relative tolerance for the eta_star root solve.
pub const DEFAULT_ETA_TOL: f64 = 1e-12;
/// Values below this are treated as exact zero (and stay zero under the
/// recursion, avoiding 0^fractional domain trouble).
pub const UNDERFLOW_FLOOR: f64 = 1e-300;

/// x^p for integer p, with 0^p = 0.
#[inline]
pub(crate) fn powi(x: f64, p: u32) -> f64 {
    match p {
        1 => x,
        2 => x * x,
        3 => x * x * x,
        _ => x.powi(p as i32),
    }
}

/// x^p for fractional p > 0, defined as 0 at x = 0 (log-space otherwise).
#[inline]
pub(crate) fn pow_frac(x: f64, p: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        (p * x.ln()).exp()
    }
}

/// The truncated fixed point pi = (pi_I[k], pi_W[k])_{k=0..K_max}.
///
/// `pi_W[k]` is the fraction of busy servers whose orbit holds at least k
/// customers (equal to delta_k); `pi_I[k]` the idle-server analogue;
/// `pi_I[0] = eta_star` and `pi_I[0] + pi_W[0] = 1`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixedPoint {
    pub eta_star: f64,
    pub pi_i: Vec<f64>,
    pub pi_w: Vec<f64>,
    pub k_max: usize,
    pub underflow_floor: f64,
}

impl FixedPoint {
    /// True when both tail sequences are valid tail measures: entries in
    /// [0,1] and nonincreasing in k. Parameter regions without a proper
    /// fixed point (the recursion can produce increasing tails there) fail
    /// this check; structural properties are only meaningful when it holds.
    pub fn is_valid_tail_measure(&self) -> bool {
        for seq in [&self.pi_i, &self.pi_w] {
            for k in 0..seq.len() {
                if !(0.0..=1.0).contains(&seq[k]) {
                    return false;
                }
                if k + 1 < seq.len() && seq[k + 1] > seq[k] + 1e-15 {
                    return false;
                }
            }
        }
        true
    }
}

/// Solve `lambda*x^d1 + mu*x - mu = 0` for the unique root in (0,1).
///
/// `G(x) = rho*x^d1 + x` is strictly increasing on [0,1] with G(0)=0 < 1 and
/// G(1) = 1+rho > 1, so bisection is guaranteed to bracket; a few Newton
/// steps then polish to full precision. `tol` is relative to `mu`.
pub fn solve_eta_star(params: &ModelParams, tol: f64) -> f64 {
    let (rho, d1) = (params.rho(), params.d1);
    let g = |x: f64| rho * powi(x, d1) + x - 1.0;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..4 {
        let dg = rho * d1 as f64 * powi(x, d1 - 1) + 1.0;
        x -= g(x) / dg;
        x = x.clamp(lo, hi);
    }
    debug_assert!(g(x).abs() <= tol.max(1e-15) * 10.0);
    x
}

/// The busy-tail recursion delta_0 = rho*eta_star^d1,
/// delta_k = rho*delta_{k-1}^d1 + rho*(lambda/(k*theta)*delta_{k-1}^d1)^(d1/d2).
pub fn delta_sequence(params: &ModelParams, eta_star: f64, k_max: usize) -> Vec<f64> {
    let rho = params.rho();
    let frac = params.d1 as f64 / params.d2 as f64;
    let mut delta = Vec::with_capacity(k_max + 1);
    let mut d = rho * powi(eta_star, params.d1);
    delta.push(d);
    for k in 1..=k_max {
        let base = params.lambda / (k as f64 * params.theta) * powi(d, params.d1);
        d = rho * powi(d, params.d1) + rho * pow_frac(base, frac);
        if d < UNDERFLOW_FLOOR {
            d = 0.0;
        }
        delta.push(d);
    }
    delta
}

/// Compute the truncated fixed point via the delta recursion:
/// pi_I[0] = eta_star, pi_W[k] = delta_k,
/// pi_I[k] = (lambda/(k*theta) * delta_{k-1}^d1)^(1/d2) for k >= 1.
pub fn fixed_point(params: &ModelParams, k_max: usize) -> FixedPoint {
    let eta_star = solve_eta_star(params, DEFAULT_ETA_TOL);
    let pi_w = delta_sequence(params, eta_star, k_max);
    let mut pi_i = Vec::with_capacity(k_max + 1);
    pi_i.push(eta_star);
    for k in 1..=k_max {
        let base = params.lambda / (k as f64 * params.theta) * powi(pi_w[k - 1], params.d1);
        pi_i.push(pow_frac(base, 1.0 / params.d2 as f64));
    }
    FixedPoint { eta_star, pi_i, pi_w, k_max, underflow_floor: UNDERFLOW_FLOOR }
}

/// Closed-form fixed point for d1 = d2 = d, accumulated in log space:
///
/// pi_W[k] = prod_{j=1..k} ((lambda+j*theta)/(j*theta))^(d^(k-j))
///           * rho^((d^(k+1)-1)/(d-1)) * eta_star^(d^(k+1))
/// pi_I[k] = (lambda/(k*theta))^(1/d)
///           * prod_{j=1..k-1} ((lambda+j*theta)/(j*theta))^(d^(k-1-j))
///           * rho^((d^k-1)/(d-1)) * eta_star^(d^k)
///
/// At d = 1 the geometric exponent sums telescope to k+1 and k.
pub fn fixed_point_equal_d(params: &ModelParams, k_max: usize) -> Result<FixedPoint, Error> {
    if params.d1 != params.d2 {
        return Err(Error::UnequalProbeCounts { d1: params.d1, d2: params.d2 });
    }
    let d = params.d1 as f64;
    let rho = params.rho();
    let eta_star = solve_eta_star(params, DEFAULT_ETA_TOL);
    let (ln_rho, ln_eta) = (rho.ln(), eta_star.ln());
    let ratio_ln =
        |j: usize| ((params.lambda + j as f64 * params.theta) / (j as f64 * params.theta)).ln();
    let geom = |m: u32| -> f64 {
        // (d^m - 1)/(d - 1), continued to m at d = 1
        if params.d1 == 1 {
            m as f64
        } else {
            (d.powi(m as i32) - 1.0) / (d - 1.0)
        }
    };
    let from_ln = |ln: f64| if ln < -700.0 { 0.0 } else { ln.exp() };

    let mut pi_w = vec![rho * powi(eta_star, params.d1)];
    let mut pi_i = vec![eta_star];
    for k in 1..=k_max {
        let mut lw = 0.0;
        for j in 1..=k {
            lw += d.powi((k - j) as i32) * ratio_ln(j);
        }
        lw += geom(k as u32 + 1) * ln_rho + d.powi(k as i32 + 1) * ln_eta;
        pi_w.push(from_ln(lw));

        let mut li = (params.lambda / (k as f64 * params.theta)).ln() / d;
        for j in 1..k {
            li += d.powi((k - 1 - j) as i32) * ratio_ln(j);
        }
        li += geom(k as u32) * ln_rho + d.powi(k as i32) * ln_eta;
        pi_i.push(from_ln(li));
    }
    Ok(FixedPoint { eta_star, pi_i, pi_w, k_max, underflow_floor: UNDERFLOW_FLOOR })
}

/// Max relative residual of k*theta*pi_I[k]^d2 = lambda*pi_W[k-1]^d1 over
/// 1 <= k <= K_max, restricted to levels above the underflow floor.
pub fn verify_corollary_identity(fp: &FixedPoint, params: &ModelParams) -> f64 {
    let mut worst = 0.0f64;
    for k in 1..=fp.k_max {
        let rhs = params.lambda * powi(fp.pi_w[k - 1], params.d1);
        if rhs <= fp.underflow_floor || fp.pi_i[k] <= fp.underflow_floor {
            continue;
        }
        let lhs = k as f64 * params.theta * powi(fp.pi_i[k], params.d2);
        worst = worst.max((lhs - rhs).abs() / rhs.max(fp.underflow_floor));
    }
    worst
}

/// Smallest K such that both tail sequences are strictly decreasing for all
/// k >= K within the horizon (full-precision comparisons; pairs that have
/// both hit the underflow floor are excluded from the scan).
pub fn detect_k(fp: &FixedPoint) -> Result<usize, Error> {
    let mut k_val = 0usize;
    for k in 0..fp.k_max {
        if fp.pi_w[k + 1] == 0.0 && fp.pi_i[k + 1] == 0.0 {
            break;
        }
        if !(fp.pi_w[k + 1] < fp.pi_w[k] && fp.pi_i[k + 1] < fp.pi_i[k]) {
            k_val = k + 1;
        }
    }
    if k_val >= fp.k_max {
        return Err(Error::Precondition(
            "no joint-monotone threshold found within the truncation horizon".into(),
        ));
    }
    Ok(k_val)
}
