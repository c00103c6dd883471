//! Truncated fraction-measure state and the mean-field ODE system.
//!
//! State components are cumulative tails: `s_w[k]` / `s_i[k]` are the
//! fractions of busy / idle servers whose orbit holds at least k customers,
//! so `s_i[0] + s_w[0] = 1`. The drift implements
//!
//! ```text
//! dS_I[0] = -lambda*S_I[0]^d1 + mu*S_W[0]
//! dS_W[0] =  lambda*S_I[0]^d1 - lambda*S_W[0]^d1 + theta*S_I[1]^d2 - mu*S_W[0]
//! k >= 1:
//! dS_W[k] =  lambda*S_W[k-1]^d1 - lambda*S_W[k]^d1
//!            + (k+1)*theta*S_I[k+1]^d2 + lambda*S_I[k]^d1 - mu*S_W[k]
//! dS_I[k] = -lambda*S_I[k]^d1 - k*theta*S_I[k]^d2 + mu*S_W[k]
//! ```
//!
//! with the truncation closure `S_I[K_max+1] := 0`. Two published variants
//! of the retrial inflow term differ on whether the (k+1)-rate multiplies
//! the level-k or level-(k+1) idle tail; only the level-(k+1) form is
//! stationary at the fixed point, so that form is implemented.
//!
//! Note: the level-0 pair does not cancel exactly (dS_I[0] + dS_W[0] =
//! theta*S_I[1]^d2 - lambda*S_W[0]^d1, which is nonzero away from the fixed
//! point), so the raw drift leaks total mass. The integrator therefore
//! renormalizes level 0 after each step by default, counts what it did, and
//! can be asked not to (`renormalize: false`) so the raw conservation defect
//! of the equations themselves can be measured.

use crate::fixedpoint::{powi, FixedPoint};
use crate::params::{Error, ModelParams};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Truncated fraction-measure state at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub s_i: Vec<f64>,
    pub s_w: Vec<f64>,
    pub t: f64,
}

impl StateVector {
    /// Empty system: every server idle, every orbit empty.
    pub fn empty(k_max: usize) -> Self {
        let mut s_i = vec![0.0; k_max + 1];
        s_i[0] = 1.0;
        Self { s_i, s_w: vec![0.0; k_max + 1], t: 0.0 }
    }

    /// State positioned exactly at the fixed point.
    pub fn at_fixed_point(fp: &FixedPoint) -> Self {
        Self { s_i: fp.pi_i.clone(), s_w: fp.pi_w.clone(), t: 0.0 }
    }

    pub fn k_max(&self) -> usize {
        self.s_i.len() - 1
    }

    pub fn linf_distance(&self, fp: &FixedPoint) -> f64 {
        let mut d = 0.0f64;
        for k in 0..self.s_i.len() {
            d = d.max((self.s_i[k] - fp.pi_i[k]).abs());
            d = d.max((self.s_w[k] - fp.pi_w[k]).abs());
        }
        d
    }

    pub fn l1_distance(&self, fp: &FixedPoint) -> f64 {
        let mut d = 0.0;
        for k in 0..self.s_i.len() {
            d += (self.s_i[k] - fp.pi_i[k]).abs() + (self.s_w[k] - fp.pi_w[k]).abs();
        }
        d
    }
}

/// Boundary rule at the truncation level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Closure {
    /// S_I[K_max+1] := 0 in the dS_W[K_max] equation.
    #[default]
    ZeroTail,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OdeConfig {
    pub k_max: usize,
    pub dt: f64,
    pub t_max: f64,
    /// Keep every `sample_every`-th step in the trajectory (>= 1).
    pub sample_every: usize,
    pub closure: Closure,
    /// Renormalize level 0 (s_i[0] := 1 - s_w[0]) after every step.
    pub renormalize: bool,
}

impl Default for OdeConfig {
    fn default() -> Self {
        Self {
            k_max: crate::fixedpoint::DEFAULT_K_MAX,
            dt: 1e-3,
            t_max: 200.0,
            sample_every: 100,
            closure: Closure::ZeroTail,
            renormalize: true,
        }
    }
}

impl OdeConfig {
    fn validate(&self) -> Result<(), Error> {
        if !(self.dt > 0.0 && self.t_max > 0.0 && self.k_max >= 1 && self.sample_every >= 1) {
            return Err(Error::InvalidConfig(format!(
                "need dt > 0, t_max > 0, k_max >= 1, sample_every >= 1 (got dt={}, t_max={}, k_max={}, sample_every={})",
                self.dt, self.t_max, self.k_max, self.sample_every
            )));
        }
        Ok(())
    }
}

/// Time-sampled ODE solution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<StateVector>,
    pub params: ModelParams,
    /// Number of component clamps to [0,1] applied across all steps.
    pub clamp_count: u64,
    /// Total |adjustment| applied by level-0 renormalization.
    pub renorm_magnitude: f64,
    /// Max |s_i[0] + s_w[0] - 1| observed before renormalization.
    pub max_conservation_defect: f64,
}

impl Trajectory {
    pub fn final_state(&self) -> &StateVector {
        self.samples.last().expect("trajectory has at least the initial sample")
    }
}

/// Drift of the truncated system, written into `out` (same shape as `state`).
pub fn drift_into(state: &StateVector, params: &ModelParams, out: &mut StateVector) {
    let k_max = state.k_max();
    let (lam, mu, th) = (params.lambda, params.mu, params.theta);
    let (d1, d2) = (params.d1, params.d2);
    let si_d1: Vec<f64> = state.s_i.iter().map(|&x| powi(x, d1)).collect();
    let si_d2: Vec<f64> = state.s_i.iter().map(|&x| powi(x, d2)).collect();
    let sw_d1: Vec<f64> = state.s_w.iter().map(|&x| powi(x, d1)).collect();
    let si_d2_next = |k: usize| if k < k_max { si_d2[k + 1] } else { 0.0 };

    out.s_i[0] = -lam * si_d1[0] + mu * state.s_w[0];
    out.s_w[0] = lam * si_d1[0] - lam * sw_d1[0] + th * si_d2_next(0) - mu * state.s_w[0];
    for k in 1..=k_max {
        out.s_w[k] = lam * sw_d1[k - 1] - lam * sw_d1[k]
            + (k + 1) as f64 * th * si_d2_next(k)
            + lam * si_d1[k]
            - mu * state.s_w[k];
        out.s_i[k] = -lam * si_d1[k] - k as f64 * th * si_d2[k] + mu * state.s_w[k];
    }
    out.t = state.t;
}

/// Drift of the truncated system.
pub fn drift(state: &StateVector, params: &ModelParams) -> StateVector {
    let mut out = state.clone();
    drift_into(state, params, &mut out);
    out
}

/// Fixed-step classical RK4 over the drift.
///
/// After each step every component is clamped to [0,1]; with
/// `config.renormalize` the level-0 constraint `s_i[0] = 1 - s_w[0]` is then
/// re-imposed. Both interventions are counted and their magnitudes reported
/// on the trajectory. The final state is sampled exactly at `t_max` (a
/// shorter last step is taken when `t_max` is not a multiple of `dt`).
pub fn integrate(
    initial: &StateVector,
    params: &ModelParams,
    config: &OdeConfig,
) -> Result<Trajectory, Error> {
    config.validate()?;
    if initial.s_i.len() != config.k_max + 1 || initial.s_w.len() != config.k_max + 1 {
        return Err(Error::InvalidConfig(format!(
            "initial state has {} levels, config.k_max = {}",
            initial.s_i.len() - 1,
            config.k_max
        )));
    }

    let mut state = initial.clone();
    state.t = 0.0;
    let mut traj = Trajectory {
        samples: vec![state.clone()],
        params: *params,
        clamp_count: 0,
        renorm_magnitude: 0.0,
        max_conservation_defect: 0.0,
    };

    let mut k1 = state.clone();
    let mut k2 = state.clone();
    let mut k3 = state.clone();
    let mut k4 = state.clone();
    let mut tmp = state.clone();

    let n_levels = config.k_max + 1;
    let mut step_index: usize = 0;
    loop {
        let remaining = config.t_max - state.t;
        if remaining <= 1e-15 * config.t_max.max(1.0) {
            break;
        }
        let dt = config.dt.min(remaining);

        drift_into(&state, params, &mut k1);
        stage(&state, &k1, 0.5 * dt, &mut tmp, n_levels);
        drift_into(&tmp, params, &mut k2);
        stage(&state, &k2, 0.5 * dt, &mut tmp, n_levels);
        drift_into(&tmp, params, &mut k3);
        stage(&state, &k3, dt, &mut tmp, n_levels);
        drift_into(&tmp, params, &mut k4);

        for k in 0..n_levels {
            state.s_i[k] += dt / 6.0 * (k1.s_i[k] + 2.0 * k2.s_i[k] + 2.0 * k3.s_i[k] + k4.s_i[k]);
            state.s_w[k] += dt / 6.0 * (k1.s_w[k] + 2.0 * k2.s_w[k] + 2.0 * k3.s_w[k] + k4.s_w[k]);
        }
        state.t += dt;

        for k in 0..n_levels {
            for v in [&mut state.s_i[k], &mut state.s_w[k]] {
                if !v.is_finite() {
                    return Err(Error::NumericalBlowup { t: state.t });
                }
                let c = v.clamp(0.0, 1.0);
                if c != *v {
                    traj.clamp_count += 1;
                    *v = c;
                }
            }
        }
        let defect = (state.s_i[0] + state.s_w[0] - 1.0).abs();
        traj.max_conservation_defect = traj.max_conservation_defect.max(defect);
        if config.renormalize {
            traj.renorm_magnitude += defect;
            state.s_i[0] = 1.0 - state.s_w[0];
        }

        step_index += 1;
        let at_end = config.t_max - state.t <= 1e-15 * config.t_max.max(1.0);
        if at_end || step_index.is_multiple_of(config.sample_every) {
            traj.samples.push(state.clone());
        }
        if at_end {
            break;
        }
    }
    Ok(traj)
}

#[inline]
fn stage(base: &StateVector, k: &StateVector, h: f64, out: &mut StateVector, n: usize) {
    for i in 0..n {
        out.s_i[i] = base.s_i[i] + h * k.s_i[i];
        out.s_w[i] = base.s_w[i] + h * k.s_w[i];
    }
    out.t = base.t + h;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    /// True iff s_w[k+1]+s_i[k+1] < s_w[k]+s_i[k] for all k >= 1 above floor.
    pub level_sums_ok: bool,
    /// Smallest joint-monotone threshold (same definition as
    /// `fixedpoint::detect_k`), if one exists within the horizon.
    pub k_observed: Option<usize>,
}

pub fn check_monotonicity(state: &StateVector) -> MonotonicityReport {
    let k_max = state.k_max();
    let floor = crate::fixedpoint::UNDERFLOW_FLOOR;
    let mut level_sums_ok = true;
    for k in 1..k_max {
        let (a, b) = (state.s_w[k] + state.s_i[k], state.s_w[k + 1] + state.s_i[k + 1]);
        if a <= floor && b <= floor {
            break;
        }
        if b >= a {
            level_sums_ok = false;
            break;
        }
    }
    let mut k_val = 0usize;
    for k in 0..k_max {
        if state.s_w[k + 1] <= floor && state.s_i[k + 1] <= floor {
            break;
        }
        if !(state.s_w[k + 1] < state.s_w[k] && state.s_i[k + 1] < state.s_i[k]) {
            k_val = k + 1;
        }
    }
    let k_observed = if k_val < k_max { Some(k_val) } else { None };
    MonotonicityReport { level_sums_ok, k_observed }
}

/// Empirical Lipschitz probe: max |F(y)-F(z)|_inf / |y-z|_inf over random
/// pairs of valid states (nonincreasing tails, level 0 normalized).
/// Deterministic for a fixed seed; pairs with y == z are skipped.
pub fn lipschitz_probe(params: &ModelParams, k_max: usize, samples: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let random_state = |rng: &mut ChaCha8Rng| {
        let mut s = StateVector::empty(k_max);
        s.s_i[0] = rng.gen::<f64>();
        s.s_w[0] = 1.0 - s.s_i[0];
        let heads = (s.s_i[0], s.s_w[0]);
        for (seq, head) in [(&mut s.s_i, heads.0), (&mut s.s_w, heads.1)] {
            let mut tail: Vec<f64> = (0..k_max).map(|_| rng.gen::<f64>() * head).collect();
            tail.sort_by(|a, b| b.partial_cmp(a).unwrap());
            seq[1..].copy_from_slice(&tail);
        }
        s
    };
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let y = random_state(&mut rng);
        let z = random_state(&mut rng);
        let mut dist = 0.0f64;
        for k in 0..=k_max {
            dist = dist.max((y.s_i[k] - z.s_i[k]).abs()).max((y.s_w[k] - z.s_w[k]).abs());
        }
        if dist == 0.0 {
            continue;
        }
        let (fy, fz) = (drift(&y, params), drift(&z, params));
        let mut fd = 0.0f64;
        for k in 0..=k_max {
            fd = fd.max((fy.s_i[k] - fz.s_i[k]).abs()).max((fy.s_w[k] - fz.s_w[k]).abs());
        }
        worst = worst.max(fd / dist);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixedpoint::fixed_point;

    fn p(lambda: f64, mu: f64, theta: f64, d1: u32, d2: u32) -> ModelParams {
        ModelParams::new(lambda, mu, theta, d1, d2).unwrap()
    }

    #[test]
    fn drift_vanishes_at_fixed_point() {
        for (d1, d2) in [(2, 1), (1, 2), (5, 20), (3, 3)] {
            let params = p(1.0, 5.0, 2.0, d1, d2);
            let fp = fixed_point(&params, 48);
            let d = drift(&StateVector::at_fixed_point(&fp), &params);
            // Residual checked below the truncation level: the top level
            // feels the zero-tail closure, which cuts off real inflow.
            for k in 0..48 {
                assert!(d.s_i[k].abs() <= 1e-12, "d1={d1} d2={d2} k={k}: {}", d.s_i[k]);
                assert!(d.s_w[k].abs() <= 1e-12, "d1={d1} d2={d2} k={k}: {}", d.s_w[k]);
            }
        }
    }

    #[test]
    fn drift_empty_system() {
        let params = p(1.0, 5.0, 2.0, 2, 1);
        let d = drift(&StateVector::empty(8), &params);
        assert_eq!(d.s_i[0], -1.0);
        assert_eq!(d.s_w[0], 1.0);
        for k in 1..=8 {
            assert_eq!(d.s_i[k], 0.0);
            assert_eq!(d.s_w[k], 0.0);
        }
    }

    #[test]
    fn drift_hand_example() {
        let params = p(1.0, 5.0, 2.0, 2, 2);
        let mut s = StateVector::empty(4);
        s.s_i = vec![0.5, 0.1, 0.0, 0.0, 0.0];
        s.s_w = vec![0.5, 0.0, 0.0, 0.0, 0.0];
        let d = drift(&s, &params);
        assert!((d.s_i[0] - 2.25).abs() < 1e-15);
        assert!((d.s_w[0] - (-2.48)).abs() < 1e-15);
        assert!((d.s_w[1] - 0.26).abs() < 1e-15);
        assert!((d.s_i[1] - (-0.03)).abs() < 1e-15);
    }

    #[test]
    fn stationary_start_stays_put() {
        let params = p(1.0, 5.0, 2.0, 2, 1);
        let fp = fixed_point(&params, 32);
        let config = OdeConfig { k_max: 32, dt: 1e-2, t_max: 100.0, ..Default::default() };
        let traj = integrate(&StateVector::at_fixed_point(&fp), &params, &config).unwrap();
        assert!(traj.final_state().linf_distance(&fp) <= 1e-9);
    }

    #[test]
    fn final_sample_lands_exactly_on_horizon() {
        let params = p(1.0, 5.0, 2.0, 1, 1);
        let config =
            OdeConfig { k_max: 4, dt: 0.3, t_max: 1.0, sample_every: 1, ..Default::default() };
        let traj = integrate(&StateVector::empty(4), &params, &config).unwrap();
        assert!((traj.final_state().t - 1.0).abs() < 1e-12);
        let times: Vec<f64> = traj.samples.iter().map(|s| s.t).collect();
        assert!(times.windows(2).all(|w| w[1] > w[0]), "{times:?}");
    }

    #[test]
    fn conservation_defect_is_reported_raw_without_renorm() {
        // The level-0 pair of the published equations does not cancel, so
        // with renormalization off the defect over short horizons is real
        // and sizable; the integrator must report it, not hide it.
        let params = p(1.0, 5.0, 2.0, 1, 2);
        let config = OdeConfig {
            k_max: 32,
            dt: 1e-3,
            t_max: 1.0,
            renormalize: false,
            ..Default::default()
        };
        let traj = integrate(&StateVector::empty(32), &params, &config).unwrap();
        let s = traj.final_state();
        let defect = (s.s_i[0] + s.s_w[0] - 1.0).abs();
        assert!(defect > 1e-3, "expected a visible raw defect, got {defect}");
        assert!(traj.max_conservation_defect >= defect);
    }

    #[test]
    fn renormalization_holds_level_zero_constraint() {
        let params = p(1.0, 5.0, 2.0, 1, 2);
        let config = OdeConfig { k_max: 32, dt: 1e-3, t_max: 5.0, ..Default::default() };
        let traj = integrate(&StateVector::empty(32), &params, &config).unwrap();
        for s in &traj.samples {
            assert!((s.s_i[0] + s.s_w[0] - 1.0).abs() <= 1e-12);
        }
        assert!(traj.renorm_magnitude > 0.0);
    }

    #[test]
    fn monotonicity_report_on_fixed_point_matches_detect_k() {
        for (d1, d2) in [(1, 2), (1, 8), (1, 15), (5, 10)] {
            let params = p(1.0, 5.0, 2.0, d1, d2);
            let fp = fixed_point(&params, 64);
            let report = check_monotonicity(&StateVector::at_fixed_point(&fp));
            assert!(report.level_sums_ok, "d1={d1} d2={d2}");
            assert_eq!(
                report.k_observed,
                Some(crate::fixedpoint::detect_k(&fp).unwrap()),
                "d1={d1} d2={d2}"
            );
        }
    }

    #[test]
    fn empty_state_level_sums_vacuously_ok() {
        let report = check_monotonicity(&StateVector::empty(8));
        assert!(report.level_sums_ok);
    }

    #[test]
    fn lipschitz_probe_finite_and_deterministic() {
        let params = p(1.0, 5.0, 2.0, 2, 2);
        let a = lipschitz_probe(&params, 8, 10_000, 7);
        let b = lipschitz_probe(&params, 8, 10_000, 7);
        assert!(a.is_finite() && a > 0.0);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn blowup_is_detected_and_named() {
        let params = p(1.0, 5.0, 2.0, 1, 1);
        // Absurd step size destabilizes RK4; clamping keeps values finite,
        // so force the issue with a state already outside sanity.
        let mut s = StateVector::empty(2);
        s.s_i[0] = f64::NAN;
        let config = OdeConfig { k_max: 2, dt: 1.0, t_max: 2.0, ..Default::default() };
        match integrate(&s, &params, &config) {
            Err(Error::NumericalBlowup { t }) => assert!(t > 0.0),
            other => panic!("expected blowup, got {other:?}"),
        }
    }
}
