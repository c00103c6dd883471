//! Randomized property suite, runnable standalone:
//! `cargo test -p retrial-supermarket --test properties`.
//!
//! Covers the four invariant families the acceptance gate also spot-checks —
//! simulator determinism, per-event customer conservation, snapshot
//! monotonicity — plus structural properties of the fixed point and the
//! order-preservation / level-sum-monotonicity behavior of the ODE flow.

use proptest::prelude::*;
use retrial_supermarket::fixedpoint::{fixed_point, solve_eta_star, verify_corollary_identity};
use retrial_supermarket::meanfield::{check_monotonicity, integrate, OdeConfig, StateVector};
use retrial_supermarket::simulator::{
    measure_fractions, run_replication, RetrialPolicy, SimConfig, SystemState,
};
use retrial_supermarket::ModelParams;

fn params(lambda: f64, mu: f64, theta: f64, d1: u32, d2: u32) -> ModelParams {
    ModelParams::new(lambda, mu, theta, d1, d2).unwrap()
}

/// Strategy over stable, well-scaled parameter sets.
fn arb_params() -> impl Strategy<Value = ModelParams> {
    (0.05f64..0.95, 0.5f64..8.0, 0.1f64..5.0, 1u32..8, 1u32..8)
        .prop_map(|(rho, mu, theta, d1, d2)| params(rho * mu, mu, theta, d1, d2))
}

/// A valid mean-field state: level-0 classes sum to one, both tails
/// nonincreasing and bounded by their level-0 heads.
fn arb_state(k_max: usize) -> impl Strategy<Value = StateVector> {
    (
        0.0f64..1.0,
        proptest::collection::vec(0.0f64..1.0, k_max),
        proptest::collection::vec(0.0f64..1.0, k_max),
    )
        .prop_map(move |(w0, tw, ti)| {
            let mut s = StateVector::empty(k_max);
            s.s_w[0] = w0;
            s.s_i[0] = 1.0 - w0;
            for (seq, tail) in [(&mut s.s_w, tw), (&mut s.s_i, ti)] {
                let head = seq[0];
                let mut vals: Vec<f64> = tail.into_iter().map(|u| u * head).collect();
                vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
                seq[1..].copy_from_slice(&vals);
            }
            s
        })
}

/// Componentwise order that the flow preserves: waiting tails at every
/// level, idle tails at levels k >= 1 (the level-0 idle fraction is the
/// complement of the busy fraction and reverses direction).
fn le_adjusted(a: &StateVector, b: &StateVector, tol: f64) -> bool {
    let k_max = a.k_max();
    (0..=k_max).all(|k| a.s_w[k] <= b.s_w[k] + tol)
        && (1..=k_max).all(|k| a.s_i[k] <= b.s_i[k] + tol)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, ..ProptestConfig::default() })]

    /// The idle root stays in (0, 1), solves its defining equation, grows
    /// with the probe count, and shrinks with the load.
    #[test]
    fn idle_root_bracket_and_monotonicity(rho in 0.05f64..0.95, d1 in 1u32..20) {
        let eta = solve_eta_star(&params(rho, 1.0, 1.0, d1, 1), 1e-12);
        prop_assert!(eta > 0.0 && eta < 1.0);
        let residual = rho * eta.powi(d1 as i32) + eta - 1.0;
        prop_assert!(residual.abs() < 1e-10, "residual {residual}");
        let eta_deeper = solve_eta_star(&params(rho, 1.0, 1.0, d1 + 1, 1), 1e-12);
        prop_assert!(eta_deeper >= eta - 1e-12);
        let eta_heavier = solve_eta_star(&params((rho + 0.04).min(0.99), 1.0, 1.0, d1, 1), 1e-12);
        prop_assert!(eta_heavier <= eta + 1e-12);
    }

    /// Whenever the computed fixed point is a valid tail measure, its level
    /// sums decrease strictly and the per-level balance identity holds.
    #[test]
    fn fixed_point_structure(p in arb_params()) {
        let fp = fixed_point(&p, 48);
        prop_assume!(fp.is_valid_tail_measure());
        let report = check_monotonicity(&StateVector::at_fixed_point(&fp));
        prop_assert!(report.level_sums_ok);
        let residual = verify_corollary_identity(&fp, &p);
        prop_assert!(residual <= 1e-10, "residual {residual}");
    }

    /// Level sums stay strictly decreasing along the flow started from a
    /// valid tail-measure state (checked at the final sample of a short
    /// integration whenever the target fixed point is itself valid).
    #[test]
    fn level_sums_monotone_along_flow(p in arb_params(), s in arb_state(16)) {
        prop_assume!(fixed_point(&p, 16).is_valid_tail_measure());
        let config = OdeConfig { k_max: 16, dt: 1e-3, t_max: 1.0, sample_every: 100, ..Default::default() };
        let traj = integrate(&s, &p, &config).unwrap();
        let report = check_monotonicity(traj.final_state());
        prop_assert!(report.level_sums_ok);
    }

    /// The flow preserves the adjusted componentwise order: the empty state
    /// is below every valid state, and stays below it along the flow.
    #[test]
    fn flow_preserves_order(p in arb_params(), upper in arb_state(16)) {
        let config = OdeConfig { k_max: 16, dt: 1e-3, t_max: 2.0, sample_every: 200, ..Default::default() };
        let lower = StateVector::empty(16);
        prop_assert!(le_adjusted(&lower, &upper, 0.0));
        let ta = integrate(&lower, &p, &config).unwrap();
        let tb = integrate(&upper, &p, &config).unwrap();
        for (a, b) in ta.samples.iter().zip(&tb.samples) {
            prop_assert!(le_adjusted(a, b, 1e-8), "order lost at t = {}", a.t);
        }
    }

    /// Snapshot counting pass agrees with an independent brute-force
    /// recount and satisfies the snapshot invariants (tails nonincreasing,
    /// classes partition the servers).
    #[test]
    fn snapshot_matches_recount(
        busy in proptest::collection::vec(any::<bool>(), 1..40),
        orbits in proptest::collection::vec(0u32..12, 40),
    ) {
        let n = busy.len();
        let state = SystemState { busy, orbit: orbits[..n].to_vec(), clock: 0.0 };
        let k_max = 8usize;
        let snap = measure_fractions(&state, k_max);
        for k in 0..=k_max {
            let w = state.busy.iter().zip(&state.orbit)
                .filter(|&(&b, &o)| b && o as usize >= k).count() as f64 / n as f64;
            let i = state.busy.iter().zip(&state.orbit)
                .filter(|&(&b, &o)| !b && o as usize >= k).count() as f64 / n as f64;
            prop_assert!((snap.x_w[k] - w).abs() < 1e-12);
            prop_assert!((snap.x_i[k] - i).abs() < 1e-12);
        }
        prop_assert!(snap.x_w.windows(2).all(|v| v[1] <= v[0]));
        prop_assert!(snap.x_i.windows(2).all(|v| v[1] <= v[0]));
        prop_assert!((snap.x_w[0] + snap.x_i[0] - 1.0).abs() < 1e-12);
    }

    /// Identical seeds give identical replication outcomes, bit for bit.
    #[test]
    fn simulator_is_deterministic(seed in any::<u64>(), rep in 0u32..4) {
        let config = SimConfig {
            horizon_events: 20_000,
            warmup_events: 4_000,
            ..SimConfig::new(10, params(1.0, 5.0, 2.0, 2, 2), 20_000, seed)
        };
        let a = run_replication(&config, rep, 0);
        let b = run_replication(&config, rep, 0);
        prop_assert_eq!(format!("{:?}", a), format!("{:?}", b));
    }

    /// The per-event ledger audit never finds a customer created or lost,
    /// under either retrial policy.
    #[test]
    fn simulator_conserves_customers(seed in any::<u64>(), home in any::<bool>()) {
        let config = SimConfig {
            horizon_events: 20_000,
            warmup_events: 4_000,
            retrial_policy: if home { RetrialPolicy::HomeServer } else { RetrialPolicy::MigrateMin },
            ..SimConfig::new(10, params(1.0, 5.0, 2.0, 2, 2), 20_000, seed)
        };
        let rep = run_replication(&config, 0, 1);
        prop_assert_eq!(rep.audit_violations, 0);
    }
}
