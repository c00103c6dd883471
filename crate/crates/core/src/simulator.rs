//! Discrete-event simulation of the finite-n retrial supermarket system.
//!
//! n servers, Poisson arrivals at total rate n*lambda, exponential service
//! at rate mu, and per-orbit-customer retrials at rate theta. Orbits are
//! kept per server: the published fraction measures ("busy servers with at
//! least k customers in the orbit") are degenerate under a single global
//! orbit, so the per-server reading is the only one that gives the state
//! space any structure. The mean-field retrial flux does not pin down a
//! unique microscopic retrial rule, so two policies ship: `MigrateMin`
//! (probe d2 servers, move to the idle one with the smallest orbit) and
//! `HomeServer` (re-enter service only at the customer's own server).
//! Agreement with the fixed point is asserted at level 0 only; deeper levels
//! are reported as data.
//!
//! All clocks are exponential, so the next event is sampled by total-rate
//! competition (equivalent to regenerating every clock after each state
//! change, which memorylessness makes exact). Each replication is a
//! sequential deterministic process seeded with `seed + replication_index`;
//! replications run in parallel and merge in index order, so results are
//! bit-identical across runs.

use crate::fixedpoint::FixedPoint;
use crate::params::{Error, ModelParams};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// What a retrying customer does when it wins its retrial clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum RetrialPolicy {
    /// Probe d2 servers; if any is idle, begin service at the idle one with
    /// the smallest orbit and decrement the origin server's orbit.
    #[default]
    MigrateMin,
    /// Re-enter service at the customer's own server iff it is idle; d2 is
    /// ignored. With d1 = d2 = 1 this decouples the system into n
    /// independent single-server retrial queues.
    HomeServer,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub params: ModelParams,
    pub retrial_policy: RetrialPolicy,
    pub horizon_events: u64,
    pub warmup_events: u64,
    pub seed: u64,
    pub replications: u32,
    /// Deepest orbit level tracked in the time-averaged fractions.
    pub k_max: usize,
    /// Probe distinct servers instead of sampling with replacement.
    pub probe_without_replacement: bool,
}

impl SimConfig {
    /// Defaults: 20% warmup, 16 replications, migrate-min, fractions to
    /// level 32, probing with replacement.
    pub fn new(n: usize, params: ModelParams, horizon_events: u64, seed: u64) -> Self {
        Self {
            n,
            params,
            retrial_policy: RetrialPolicy::MigrateMin,
            horizon_events,
            warmup_events: horizon_events / 5,
            seed,
            replications: 16,
            k_max: 32,
            probe_without_replacement: false,
        }
    }

    fn validate(&self) -> Result<(), Error> {
        if self.n < 1 {
            return Err(Error::InvalidConfig("n must be >= 1".into()));
        }
        if self.horizon_events <= self.warmup_events {
            return Err(Error::InvalidConfig(format!(
                "horizon_events ({}) must exceed warmup_events ({})",
                self.horizon_events, self.warmup_events
            )));
        }
        if self.replications < 1 || self.k_max < 1 {
            return Err(Error::InvalidConfig("need replications >= 1 and k_max >= 1".into()));
        }
        Ok(())
    }
}

/// Instantaneous state of the finite system.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemState {
    pub busy: Vec<bool>,
    pub orbit: Vec<u32>,
    pub clock: f64,
}

impl SystemState {
    pub fn empty(n: usize) -> Self {
        Self { busy: vec![false; n], orbit: vec![0; n], clock: 0.0 }
    }
}

/// Cumulative-tail fractions: x_w[k] / x_i[k] = fraction of busy / idle
/// servers whose orbit holds at least k customers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionSnapshot {
    pub x_w: Vec<f64>,
    pub x_i: Vec<f64>,
}

/// Counting pass over the servers.
pub fn measure_fractions(state: &SystemState, k_max: usize) -> FractionSnapshot {
    let n = state.busy.len() as f64;
    let mut x_w = vec![0.0; k_max + 1];
    let mut x_i = vec![0.0; k_max + 1];
    for (s, &busy) in state.busy.iter().enumerate() {
        let seq = if busy { &mut x_w } else { &mut x_i };
        let top = (state.orbit[s] as usize).min(k_max);
        for entry in seq[..=top].iter_mut() {
            *entry += 1.0;
        }
    }
    for v in x_w.iter_mut().chain(x_i.iter_mut()) {
        *v /= n;
    }
    FractionSnapshot { x_w, x_i }
}

/// Tallies of the four transition classes (plus failed retrials, which are
/// not transitions).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    /// Primary arrival that found an idle probe and entered service.
    pub arrivals_to_service: u64,
    /// Primary arrival that found every probe busy and joined an orbit.
    pub arrivals_to_orbit: u64,
    /// Service completions.
    pub completions: u64,
    /// Retrials that found an idle server and entered service.
    pub retrial_successes: u64,
    /// Retrials that found every probe busy and stayed in orbit.
    pub retrial_failures: u64,
}

/// Outcome of a single replication.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Replication {
    /// Time-averaged fractions over the post-warmup window.
    pub snapshot: FractionSnapshot,
    pub busy_fraction: f64,
    /// Mean orbit size per server (time average).
    pub mean_orbit: f64,
    /// Mean orbit size over 10 successive post-warmup windows.
    pub orbit_windows: Vec<f64>,
    pub events: EventCounts,
    /// Conservation-audit failures (0 unless auditing found drift between
    /// the event-ledger customer count and a recount of the state).
    pub audit_violations: u64,
}

/// Replication-averaged result with across-replication standard errors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimResult {
    pub snapshot: FractionSnapshot,
    pub se_w: Vec<f64>,
    pub se_i: Vec<f64>,
    pub busy_fraction: f64,
    pub busy_fraction_se: f64,
    pub mean_orbit: f64,
    pub mean_orbit_se: f64,
    /// Mean orbit size over successive post-warmup windows (rep-averaged);
    /// flat-in-expectation when the system is stable.
    pub orbit_windows: Vec<f64>,
    pub events: EventCounts,
}

/// Fenwick tree over per-server orbit counts for O(log n) weighted sampling
/// of which orbit a retrial fires from.
struct Fenwick {
    tree: Vec<u64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Self { tree: vec![0; n + 1] }
    }

    fn add(&mut self, mut i: usize, delta: i64) {
        i += 1;
        while i < self.tree.len() {
            self.tree[i] = (self.tree[i] as i64 + delta) as u64;
            i += i & i.wrapping_neg();
        }
    }

    /// Smallest index with prefix sum strictly greater than `target`.
    fn find(&self, mut target: u64) -> usize {
        let mut pos = 0usize;
        let mut mask = self.tree.len().next_power_of_two() >> 1;
        while mask > 0 {
            let next = pos + mask;
            if next < self.tree.len() && self.tree[next] <= target {
                target -= self.tree[next];
                pos = next;
            }
            mask >>= 1;
        }
        pos
    }
}

struct Engine<'a> {
    config: &'a SimConfig,
    rng: ChaCha8Rng,
    busy: Vec<bool>,
    orbit: Vec<u32>,
    // Uniform busy-server sampling: index list with swap-remove.
    busy_list: Vec<u32>,
    busy_pos: Vec<u32>,
    orbit_weights: Fenwick,
    total_orbit: u64,
    clock: f64,
    // Tail counts per level for the tracked phase, kept incrementally.
    cnt_w: Vec<f64>,
    cnt_i: Vec<f64>,
    // Time-weighted accumulators (post-warmup only).
    acc_w: Vec<f64>,
    acc_i: Vec<f64>,
    busy_time: f64,
    orbit_time: f64,
    elapsed: f64,
    events: EventCounts,
    probe_buf: Vec<usize>,
}

const NO_POS: u32 = u32::MAX;

impl<'a> Engine<'a> {
    fn new(config: &'a SimConfig, rep: u32) -> Self {
        let n = config.n;
        let k = config.k_max;
        let mut cnt_i = vec![0.0; k + 1];
        cnt_i[0] = n as f64;
        Self {
            config,
            rng: ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(rep as u64)),
            busy: vec![false; n],
            orbit: vec![0; n],
            busy_list: Vec::with_capacity(n),
            busy_pos: vec![NO_POS; n],
            orbit_weights: Fenwick::new(n),
            total_orbit: 0,
            clock: 0.0,
            cnt_w: vec![0.0; k + 1],
            cnt_i,
            acc_w: vec![0.0; k + 1],
            acc_i: vec![0.0; k + 1],
            busy_time: 0.0,
            orbit_time: 0.0,
            elapsed: 0.0,
            events: EventCounts::default(),
            probe_buf: Vec::with_capacity(16),
        }
    }

    fn set_busy(&mut self, s: usize, now_busy: bool) {
        debug_assert_ne!(self.busy[s], now_busy);
        self.busy[s] = now_busy;
        let top = (self.orbit[s] as usize).min(self.config.k_max);
        if now_busy {
            self.busy_pos[s] = self.busy_list.len() as u32;
            self.busy_list.push(s as u32);
            for k in 0..=top {
                self.cnt_i[k] -= 1.0;
                self.cnt_w[k] += 1.0;
            }
        } else {
            let pos = self.busy_pos[s] as usize;
            let last = *self.busy_list.last().unwrap();
            self.busy_list[pos] = last;
            self.busy_pos[last as usize] = pos as u32;
            self.busy_list.pop();
            self.busy_pos[s] = NO_POS;
            for k in 0..=top {
                self.cnt_w[k] -= 1.0;
                self.cnt_i[k] += 1.0;
            }
        }
    }

    fn bump_orbit(&mut self, s: usize, up: bool) {
        let cnt = if self.busy[s] { &mut self.cnt_w } else { &mut self.cnt_i };
        if up {
            self.orbit[s] += 1;
            let lvl = self.orbit[s] as usize;
            if lvl <= self.config.k_max {
                cnt[lvl] += 1.0;
            }
            self.orbit_weights.add(s, 1);
            self.total_orbit += 1;
        } else {
            debug_assert!(self.orbit[s] > 0);
            let lvl = self.orbit[s] as usize;
            if lvl <= self.config.k_max {
                cnt[lvl] -= 1.0;
            }
            self.orbit[s] -= 1;
            self.orbit_weights.add(s, -1);
            self.total_orbit -= 1;
        }
    }

    fn probe(&mut self, d: u32) {
        let n = self.config.n;
        self.probe_buf.clear();
        if self.config.probe_without_replacement {
            let d = (d as usize).min(n);
            while self.probe_buf.len() < d {
                let s = self.rng.gen_range(0..n);
                if !self.probe_buf.contains(&s) {
                    self.probe_buf.push(s);
                }
            }
        } else {
            for _ in 0..d {
                let s = self.rng.gen_range(0..n);
                self.probe_buf.push(s);
            }
        }
    }

    /// Among probed servers in the given phase, the one with the smallest
    /// orbit; ties broken uniformly among the probed candidates.
    fn best_probed(&mut self, want_busy: bool) -> Option<usize> {
        let mut best: Option<usize> = None;
        let mut best_orbit = u32::MAX;
        let mut ties = 0u32;
        for i in 0..self.probe_buf.len() {
            let s = self.probe_buf[i];
            if self.busy[s] != want_busy {
                continue;
            }
            if self.orbit[s] < best_orbit {
                best = Some(s);
                best_orbit = self.orbit[s];
                ties = 1;
            } else if self.orbit[s] == best_orbit {
                ties += 1;
                if self.rng.gen_range(0..ties) == 0 {
                    best = Some(s);
                }
            }
        }
        best
    }

    fn step(&mut self, accumulate: bool) {
        let n = self.config.n;
        let p = &self.config.params;
        let busy_count = self.busy_list.len() as f64;
        let arrival_rate = n as f64 * p.lambda;
        let service_rate = p.mu * busy_count;
        let retrial_rate = p.theta * self.total_orbit as f64;
        let total_rate = arrival_rate + service_rate + retrial_rate;

        let u: f64 = self.rng.gen();
        let dt = -(1.0 - u).ln() / total_rate;
        self.clock += dt;
        if accumulate {
            self.elapsed += dt;
            self.busy_time += busy_count * dt;
            self.orbit_time += self.total_orbit as f64 * dt;
            for k in 0..=self.config.k_max {
                self.acc_w[k] += self.cnt_w[k] * dt;
                self.acc_i[k] += self.cnt_i[k] * dt;
            }
        }

        // pick < total_rate almost always; the defensive fallbacks guard the
        // rounding edge where u*total lands exactly on a class boundary
        // whose rate is zero.
        let pick: f64 = self.rng.gen::<f64>() * total_rate;
        if pick < arrival_rate {
            self.primary_arrival();
        } else if pick < arrival_rate + service_rate && !self.busy_list.is_empty() {
            let idx = self.rng.gen_range(0..self.busy_list.len());
            let s = self.busy_list[idx] as usize;
            self.set_busy(s, false);
            self.events.completions += 1;
        } else if self.total_orbit > 0 {
            let target = self.rng.gen_range(0..self.total_orbit);
            let origin = self.orbit_weights.find(target);
            self.retrial(origin);
        } else if !self.busy_list.is_empty() {
            let idx = self.rng.gen_range(0..self.busy_list.len());
            let s = self.busy_list[idx] as usize;
            self.set_busy(s, false);
            self.events.completions += 1;
        } else {
            self.primary_arrival();
        }
    }

    fn primary_arrival(&mut self) {
        self.probe(self.config.params.d1);
        if let Some(s) = self.best_probed(false) {
            self.set_busy(s, true);
            self.events.arrivals_to_service += 1;
        } else {
            let s = self.best_probed(true).expect("every probe is idle or busy");
            self.bump_orbit(s, true);
            self.events.arrivals_to_orbit += 1;
        }
    }

    fn retrial(&mut self, origin: usize) {
        match self.config.retrial_policy {
            RetrialPolicy::HomeServer => {
                if self.busy[origin] {
                    self.events.retrial_failures += 1;
                } else {
                    self.bump_orbit(origin, false);
                    self.set_busy(origin, true);
                    self.events.retrial_successes += 1;
                }
            }
            RetrialPolicy::MigrateMin => {
                self.probe(self.config.params.d2);
                if let Some(dest) = self.best_probed(false) {
                    self.bump_orbit(origin, false);
                    self.set_busy(dest, true);
                    self.events.retrial_successes += 1;
                } else {
                    self.events.retrial_failures += 1;
                }
            }
        }
    }

    /// Ledger customer count from event tallies; must equal the state count.
    fn ledger_customers(&self) -> i64 {
        self.events.arrivals_to_service as i64 + self.events.arrivals_to_orbit as i64
            - self.events.completions as i64
    }

    fn state_customers(&self) -> i64 {
        self.busy.iter().filter(|&&b| b).count() as i64
            + self.orbit.iter().map(|&o| o as i64).sum::<i64>()
    }
}

/// Run one replication. `audit_every` > 0 recounts the state every that
/// many events and tallies any disagreement with the event ledger (0
/// disables the recount; the ledger itself is always checked at the end).
pub fn run_replication(config: &SimConfig, rep: u32, audit_every: u64) -> Replication {
    let mut eng = Engine::new(config, rep);
    let window_events = (config.horizon_events - config.warmup_events) / 10;
    let mut audit_violations = 0u64;
    let mut orbit_windows = Vec::with_capacity(10);
    let mut window_mark = (0.0, 0.0); // (orbit_time, elapsed) at window start

    for event in 0..config.horizon_events {
        eng.step(event >= config.warmup_events);
        if audit_every > 0 && (event + 1) % audit_every == 0
            && (eng.ledger_customers() != eng.state_customers()
                || eng.total_orbit as i64
                    != eng.orbit.iter().map(|&o| o as i64).sum::<i64>())
            {
                audit_violations += 1;
            }
        if event >= config.warmup_events
            && window_events > 0
            && (event - config.warmup_events + 1).is_multiple_of(window_events)
            && orbit_windows.len() < 10
        {
            let d_orbit = eng.orbit_time - window_mark.0;
            let d_t = eng.elapsed - window_mark.1;
            orbit_windows.push(d_orbit / (d_t * config.n as f64));
            window_mark = (eng.orbit_time, eng.elapsed);
        }
    }
    if eng.ledger_customers() != eng.state_customers() {
        audit_violations += 1;
    }

    let n = config.n as f64;
    let norm = eng.elapsed * n;
    let snapshot = FractionSnapshot {
        x_w: eng.acc_w.iter().map(|&a| a / norm).collect(),
        x_i: eng.acc_i.iter().map(|&a| a / norm).collect(),
    };
    Replication {
        snapshot,
        busy_fraction: eng.busy_time / norm,
        mean_orbit: eng.orbit_time / norm,
        orbit_windows,
        events: eng.events,
        audit_violations,
    }
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let r = values.len() as f64;
    let mean = values.iter().sum::<f64>() / r;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (r - 1.0);
    (mean, (var / r).sqrt())
}

/// Run all replications in parallel and merge (means with across-replication
/// standard errors). Deterministic for a fixed config.
pub fn run(config: &SimConfig) -> Result<SimResult, Error> {
    config.validate()?;
    let reps: Vec<Replication> = (0..config.replications)
        .into_par_iter()
        .map(|r| run_replication(config, r, 0))
        .collect();

    let k = config.k_max;
    let mut snapshot = FractionSnapshot { x_w: vec![0.0; k + 1], x_i: vec![0.0; k + 1] };
    let mut se_w = vec![0.0; k + 1];
    let mut se_i = vec![0.0; k + 1];
    for lvl in 0..=k {
        let w: Vec<f64> = reps.iter().map(|r| r.snapshot.x_w[lvl]).collect();
        let i: Vec<f64> = reps.iter().map(|r| r.snapshot.x_i[lvl]).collect();
        (snapshot.x_w[lvl], se_w[lvl]) = mean_se(&w);
        (snapshot.x_i[lvl], se_i[lvl]) = mean_se(&i);
    }
    let (busy_fraction, busy_fraction_se) =
        mean_se(&reps.iter().map(|r| r.busy_fraction).collect::<Vec<_>>());
    let (mean_orbit, mean_orbit_se) =
        mean_se(&reps.iter().map(|r| r.mean_orbit).collect::<Vec<_>>());
    let n_windows = reps.iter().map(|r| r.orbit_windows.len()).min().unwrap_or(0);
    let orbit_windows: Vec<f64> = (0..n_windows)
        .map(|w| reps.iter().map(|r| r.orbit_windows[w]).sum::<f64>() / reps.len() as f64)
        .collect();
    let mut events = EventCounts::default();
    for r in &reps {
        events.arrivals_to_service += r.events.arrivals_to_service;
        events.arrivals_to_orbit += r.events.arrivals_to_orbit;
        events.completions += r.events.completions;
        events.retrial_successes += r.events.retrial_successes;
        events.retrial_failures += r.events.retrial_failures;
    }
    Ok(SimResult {
        snapshot,
        se_w,
        se_i,
        busy_fraction,
        busy_fraction_se,
        mean_orbit,
        mean_orbit_se,
        orbit_windows,
        events,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KurtzStudy {
    /// (n, L-inf gap between time-averaged fractions and pi, level-0 busy
    /// fraction, level-0 busy standard error).
    pub gaps: Vec<KurtzPoint>,
    /// Gap at the largest n smaller than at the smallest n.
    pub monotone_trend: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KurtzPoint {
    pub n: usize,
    pub linf_gap: f64,
    /// Per-level |time-average - pi| for reporting.
    pub level_gaps_w: Vec<f64>,
    pub level_gaps_i: Vec<f64>,
    pub busy_fraction: f64,
    pub busy_fraction_se: f64,
    pub x_i0_se: f64,
}

/// Gap study across system sizes: for each n, run the simulation and report
/// ||time-averaged snapshot - pi||_inf plus per-level gaps.
pub fn kurtz_convergence_study(
    base: &SimConfig,
    n_values: &[usize],
    fp: &FixedPoint,
) -> Result<KurtzStudy, Error> {
    if n_values.is_empty() || n_values.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidConfig("n_values must be nonempty and nondecreasing".into()));
    }
    let levels = base.k_max.min(fp.k_max);
    let mut gaps = Vec::new();
    for &n in n_values {
        let mut config = base.clone();
        config.n = n;
        let result = run(&config)?;
        let mut linf = 0.0f64;
        let mut level_gaps_w = Vec::with_capacity(levels + 1);
        let mut level_gaps_i = Vec::with_capacity(levels + 1);
        for k in 0..=levels {
            let gw = (result.snapshot.x_w[k] - fp.pi_w[k]).abs();
            let gi = (result.snapshot.x_i[k] - fp.pi_i[k]).abs();
            linf = linf.max(gw).max(gi);
            level_gaps_w.push(gw);
            level_gaps_i.push(gi);
        }
        gaps.push(KurtzPoint {
            n,
            linf_gap: linf,
            level_gaps_w,
            level_gaps_i,
            busy_fraction: result.busy_fraction,
            busy_fraction_se: result.busy_fraction_se,
            x_i0_se: result.se_i[0],
        });
    }
    let monotone_trend = gaps.last().unwrap().linf_gap < gaps.first().unwrap().linf_gap;
    Ok(KurtzStudy { gaps, monotone_trend })
}
