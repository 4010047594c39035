//! M/G/∞ queue simulation: arrivals at rate β, services from the transform.
//!
//! The queue starts empty at time 0. `X_t = 1{N_t > 0}` alternates between
//! dormant (idle) and active (busy) periods.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use super::transform::RenewalTransform;
use crate::error::{Error, Result};
use crate::rng::par_map_paths;
use crate::stats::{ks_test, Estimate, KsResult, Welford};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// 0 uses the rayon default.
    pub workers: usize,
    /// Times at which `P(X_t = 0)` is estimated; points beyond the horizon are ignored.
    pub t_grid: Vec<f64>,
    /// Warn when more than this fraction of first cycles is censored.
    pub censor_warn: f64,
    /// Keep the event log of this many leading paths.
    pub event_log_paths: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            horizon: 30.0,
            n_paths: 100_000,
            seed: 1,
            workers: 0,
            t_grid: vec![0.5, 1.0, 2.0, 5.0, 10.0],
            censor_warn: 0.05,
            event_log_paths: 0,
        }
    }
}

/// First dormant/active cycle of one path, censored at the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirstCycle {
    /// First arrival time, or the horizon when none arrived.
    pub d1: f64,
    pub d1_censored: bool,
    /// Length of the first busy period; `horizon - d1` when it outlasts the horizon.
    pub a1: f64,
    pub a1_censored: bool,
}

impl FirstCycle {
    pub fn censored(&self) -> bool {
        self.d1_censored || self.a1_censored
    }

    /// `d1 + a1`, a lower bound when censored.
    pub fn t1(&self) -> f64 {
        self.d1 + self.a1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    Arrival,
    Departure,
    BusyStart,
    BusyEnd,
}

/// One line of an audit log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub path: usize,
    pub t: f64,
    pub event: EventKind,
    pub cycle: usize,
}

/// Aggregated Monte Carlo statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimStats {
    pub n_paths: usize,
    pub horizon: f64,
    pub beta: f64,
    pub e: f64,
    pub m: f64,
    pub degenerate: bool,
    pub t_grid: Vec<f64>,
    pub p_dormant: Vec<Estimate>,
    /// Over paths with an observed first arrival.
    pub d1: Estimate,
    /// Over paths with an observed first arrival; censored values enter as lower bounds.
    pub a1: Estimate,
    pub a1_sq: Estimate,
    pub cov_a1_a1sq: f64,
    pub t1: Estimate,
    pub p_no_arrival: Estimate,
    pub p_t1_censored: Estimate,
    /// Share of the a1² sum contributed by censored cycles.
    pub censored_a1sq_share: f64,
    /// `E[D_T / T]` at the horizon.
    pub dormant_fraction: Estimate,
    /// `V[D_T]` at the horizon.
    pub dormant_time_var: f64,
    /// KS test of uncensored d1 against Exp(β) truncated at the horizon.
    pub d1_ks: Option<KsResult>,
    pub warnings: Vec<String>,
}

/// Simulation output: aggregated stats plus per-path first cycles.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub stats: SimStats,
    pub first_cycles: Vec<FirstCycle>,
    pub events: Vec<EventRecord>,
}

struct PathResult {
    first: FirstCycle,
    dormant_at: Vec<bool>,
    dormant_time: f64,
    events: Vec<EventRecord>,
}

fn simulate_path<R: Rng>(tr: &RenewalTransform, cfg: &SimConfig, idx: usize, rng: &mut R) -> PathResult {
    let horizon = cfg.horizon;
    let log = idx < cfg.event_log_paths;
    let mut events = Vec::new();
    let gap = Exp::new(tr.beta).expect("positive arrival rate");
    // Busy periods as (start, end) in order of start.
    let mut busy: Vec<(f64, f64)> = Vec::new();
    let mut u = 0.0;
    loop {
        u += gap.sample(rng);
        if u > horizon {
            break;
        }
        let v = u + tr.sample_service(rng);
        if log {
            events.push(EventRecord { path: idx, t: u, event: EventKind::Arrival, cycle: busy.len().max(1) });
            if v <= horizon {
                events.push(EventRecord { path: idx, t: v, event: EventKind::Departure, cycle: busy.len().max(1) });
            }
        }
        match busy.last_mut() {
            Some(last) if u <= last.1 => last.1 = last.1.max(v),
            _ => busy.push((u, v)),
        }
    }
    if log {
        for (k, &(s, e)) in busy.iter().enumerate() {
            events.push(EventRecord { path: idx, t: s, event: EventKind::BusyStart, cycle: k + 1 });
            if e <= horizon {
                events.push(EventRecord { path: idx, t: e, event: EventKind::BusyEnd, cycle: k + 1 });
            }
        }
        events.sort_by(|a, b| a.t.total_cmp(&b.t));
    }
    let first = match busy.first() {
        None => FirstCycle { d1: horizon, d1_censored: true, a1: 0.0, a1_censored: false },
        Some(&(s, e)) => {
            if e > horizon {
                FirstCycle { d1: s, d1_censored: false, a1: horizon - s, a1_censored: true }
            } else {
                FirstCycle { d1: s, d1_censored: false, a1: e - s, a1_censored: false }
            }
        }
    };
    let busy_time: f64 = busy.iter().map(|&(s, e)| e.min(horizon) - s).sum();
    let dormant_at = cfg.t_grid.iter().map(|&t| !busy.iter().any(|&(s, e)| s <= t && t < e)).collect();
    PathResult { first, dormant_at, dormant_time: horizon - busy_time, events }
}

/// Simulates `n_paths` independent queues on `[0, horizon]`.
pub fn sample_paths(tr: &RenewalTransform, cfg: &SimConfig) -> Result<SimOutput> {
    if !(cfg.horizon > 0.0) || cfg.n_paths < 2 {
        return Err(Error::invalid("simulation needs horizon > 0 and at least two paths"));
    }
    if cfg.t_grid.iter().any(|&t| t < 0.0) {
        return Err(Error::invalid("t_grid must be nonnegative"));
    }
    let mut cfg = cfg.clone();
    cfg.t_grid.retain(|&t| t <= cfg.horizon);
    let n = cfg.n_paths;
    if tr.is_degenerate() {
        let first = FirstCycle { d1: cfg.horizon, d1_censored: true, a1: 0.0, a1_censored: false };
        let one = Estimate { value: 1.0, se: 0.0, n: n as u64 };
        let zero = Estimate { value: 0.0, se: 0.0, n: 0 };
        let stats = SimStats {
            n_paths: n,
            horizon: cfg.horizon,
            beta: 0.0,
            e: tr.e,
            m: tr.m,
            degenerate: true,
            t_grid: cfg.t_grid.clone(),
            p_dormant: vec![one; cfg.t_grid.len()],
            d1: zero,
            a1: zero,
            a1_sq: zero,
            cov_a1_a1sq: 0.0,
            t1: zero,
            p_no_arrival: one,
            p_t1_censored: one,
            censored_a1sq_share: 0.0,
            dormant_fraction: one,
            dormant_time_var: 0.0,
            d1_ks: None,
            warnings: vec!["permanently dormant: first arrival never occurs".into()],
        };
        return Ok(SimOutput { stats, first_cycles: vec![first; n], events: vec![] });
    }
    let results = par_map_paths(n, cfg.seed, cfg.workers, |i, rng| simulate_path(tr, &cfg, i, rng))?;

    let mut p_dormant = vec![Welford::default(); cfg.t_grid.len()];
    let (mut d1, mut a1, mut a1sq, mut t1) =
        (Welford::default(), Welford::default(), Welford::default(), Welford::default());
    let (mut no_arr, mut cens, mut frac) = (Welford::default(), Welford::default(), Welford::default());
    let mut dormant = Welford::default();
    let mut cross = 0.0;
    let (mut sq_all, mut sq_cens) = (0.0, 0.0);
    let mut d1_samples = Vec::new();
    let mut first_cycles = Vec::with_capacity(n);
    let mut events = Vec::new();
    for r in results {
        for (acc, &b) in p_dormant.iter_mut().zip(&r.dormant_at) {
            acc.push(if b { 1.0 } else { 0.0 });
        }
        let f = r.first;
        no_arr.push(if f.d1_censored { 1.0 } else { 0.0 });
        cens.push(if f.censored() { 1.0 } else { 0.0 });
        frac.push(r.dormant_time / cfg.horizon);
        dormant.push(r.dormant_time);
        if !f.d1_censored {
            d1.push(f.d1);
            d1_samples.push(f.d1);
            a1.push(f.a1);
            a1sq.push(f.a1 * f.a1);
            t1.push(f.t1());
            cross += f.a1 * f.a1 * f.a1;
            sq_all += f.a1 * f.a1;
            if f.a1_censored {
                sq_cens += f.a1 * f.a1;
            }
        }
        first_cycles.push(f);
        events.extend(r.events);
    }
    let k = a1.count() as f64;
    let cov_a1_a1sq = if k >= 2.0 { (cross - k * a1.mean() * a1sq.mean()) / (k - 1.0) } else { 0.0 };
    let horizon = cfg.horizon;
    let beta = tr.beta;
    let norm = -(-beta * horizon).exp_m1();
    let d1_ks = (d1_samples.len() >= 8).then(|| ks_test(&d1_samples, |x| -(-beta * x).exp_m1() / norm));
    let p_cens = cens.estimate();
    let mut warnings = Vec::new();
    if p_cens.value > cfg.censor_warn {
        warnings.push(format!(
            "{:.2}% of first cycles censored at horizon {horizon} (warn above {:.2}%)",
            100.0 * p_cens.value,
            100.0 * cfg.censor_warn
        ));
    }
    let stats = SimStats {
        n_paths: n,
        horizon,
        beta,
        e: tr.e,
        m: tr.m,
        degenerate: false,
        t_grid: cfg.t_grid.clone(),
        p_dormant: p_dormant.iter().map(|w| w.estimate()).collect(),
        d1: d1.estimate(),
        a1: a1.estimate(),
        a1_sq: a1sq.estimate(),
        cov_a1_a1sq,
        t1: t1.estimate(),
        p_no_arrival: no_arr.estimate(),
        p_t1_censored: p_cens,
        censored_a1sq_share: if sq_all > 0.0 { sq_cens / sq_all } else { 0.0 },
        dormant_fraction: frac.estimate(),
        dormant_time_var: dormant.variance(),
        d1_ks,
        warnings,
    };
    Ok(SimOutput { stats, first_cycles, events })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laplace::LaplaceEvaluator;
    use crate::measure::fixtures::*;
    use crate::measure::ProbabilityMeasure;
    use crate::renewal::transform::{build_renewal_transform, GridConfig};

    fn transform(m: ProbabilityMeasure) -> (LaplaceEvaluator, RenewalTransform) {
        let ev = LaplaceEvaluator::new(m);
        let tr = build_renewal_transform(&ev, &GridConfig::default()).unwrap();
        (ev, tr)
    }

    #[test]
    fn dirac_paths_stay_dormant() {
        let (_, tr) = transform(ProbabilityMeasure::dirac(0.0));
        let out = sample_paths(&tr, &SimConfig { n_paths: 10, ..Default::default() }).unwrap();
        assert!(out.stats.p_dormant.iter().all(|e| e.value == 1.0));
    }

    #[test]
    fn dormant_probability_matches_transform() {
        let (ev, tr) = transform(two_atom(0.5, 1.0));
        let cfg = SimConfig { n_paths: 20_000, horizon: 10.0, seed: 9, ..Default::default() };
        let out = sample_paths(&tr, &cfg).unwrap();
        for (t, est) in out.stats.t_grid.iter().zip(&out.stats.p_dormant) {
            let exact = ev.log_z_shifted(*t).exp();
            assert!(est.within(exact, 4.0), "t={t}: {est:?} vs {exact}");
        }
        assert!(out.stats.d1_ks.unwrap().p_value > 0.001);
    }

    #[test]
    fn event_log_is_ordered() {
        let (_, tr) = transform(two_atom(0.5, 1.0));
        let cfg = SimConfig { n_paths: 50, horizon: 10.0, event_log_paths: 3, ..Default::default() };
        let out = sample_paths(&tr, &cfg).unwrap();
        assert!(!out.events.is_empty());
        assert!(out.events.iter().all(|e| e.path < 3));
        for w in out.events.windows(2) {
            if w[0].path == w[1].path {
                assert!(w[0].t <= w[1].t);
            }
        }
    }
}
