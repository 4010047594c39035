//! Service-time law of the queue: intensity `q(τ) = Var(tilted μ at τ)`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laplace::LaplaceEvaluator;
use crate::measure::ProbabilityMeasure;

/// Tabulation grid for q.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub tau_min: f64,
    pub tau_max: f64,
    pub points: usize,
    /// Allowed relative mismatch between the integral of q and m - E.
    pub rtol: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { tau_min: 1e-4, tau_max: 1e4, points: 3000, rtol: 1e-3 }
    }
}

/// Analytic continuation of q beyond the last tabulated point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum TailModel {
    /// `q(τ) ≈ q_end exp(-rate (τ - τ_end))`
    Exponential { rate: f64 },
    /// `q(τ) ≈ q_end (τ / τ_end)^(-gamma)`
    Power { gamma: f64 },
    /// q underflowed inside the grid; nothing left beyond it.
    Negligible,
}

/// How well the tabulated intensity accounts for the arrival rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationReport {
    pub beta: f64,
    pub grid_mass: f64,
    pub tail_mass: f64,
    pub rel_mismatch: f64,
    pub tau_end: f64,
}

/// Arrival rate `β = m - E` and tabulated service density `q / β`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RenewalTransform {
    pub e: f64,
    pub m: f64,
    pub beta: f64,
    pub tau: Vec<f64>,
    pub q: Vec<f64>,
    /// Unnormalized cumulative trapezoid integral of q on `tau`.
    pub cum: Vec<f64>,
    pub tail: TailModel,
    pub heavy_tail: bool,
    pub report: TruncationReport,
}

impl RenewalTransform {
    /// Permanently dormant transform of a Dirac measure.
    pub fn degenerate(e: f64) -> Self {
        RenewalTransform {
            e,
            m: e,
            beta: 0.0,
            tau: vec![],
            q: vec![],
            cum: vec![],
            tail: TailModel::Negligible,
            heavy_tail: false,
            report: TruncationReport { beta: 0.0, grid_mass: 0.0, tail_mass: 0.0, rel_mismatch: 0.0, tau_end: 0.0 },
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.beta == 0.0
    }

    fn total(&self) -> f64 {
        self.report.grid_mass + self.report.tail_mass
    }

    /// Normalized service CDF at τ.
    pub fn service_cdf(&self, t: f64) -> f64 {
        if self.is_degenerate() || t <= 0.0 {
            return 0.0;
        }
        let total = self.total();
        let end = *self.tau.last().expect("non-empty grid");
        if t >= end {
            let qe = *self.q.last().expect("non-empty grid");
            let beyond = match self.tail {
                TailModel::Exponential { rate } => qe / rate * (-rate * (t - end)).exp(),
                TailModel::Power { gamma } => qe * end / (gamma - 1.0) * (t / end).powf(1.0 - gamma),
                TailModel::Negligible => 0.0,
            };
            return ((total - beyond) / total).clamp(0.0, 1.0);
        }
        let i = self.tau.partition_point(|&x| x <= t) - 1;
        let h = self.tau[i + 1] - self.tau[i];
        let x = t - self.tau[i];
        let s = (self.q[i + 1] - self.q[i]) / h;
        (self.cum[i] + self.q[i] * x + 0.5 * s * x * x) / total
    }

    /// Draws one service time by inverting the tabulated CDF, falling back
    /// on the tail model beyond the grid.
    pub fn sample_service<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let target = u * self.total();
        let grid = self.report.grid_mass;
        if target >= grid {
            let end = self.report.tau_end;
            return match self.tail {
                TailModel::Exponential { rate } => end - (1.0 - rng.random::<f64>()).ln() / rate,
                TailModel::Power { gamma } => end * (1.0 - rng.random::<f64>()).powf(-1.0 / (gamma - 1.0)),
                TailModel::Negligible => end,
            };
        }
        let i = (self.cum.partition_point(|&c| c <= target)).clamp(1, self.cum.len() - 1) - 1;
        let r = target - self.cum[i];
        let h = self.tau[i + 1] - self.tau[i];
        let q0 = self.q[i];
        let s = (self.q[i + 1] - q0) / h;
        // root of q0 x + s x²/2 = r in the stable form
        let disc = (q0 * q0 + 2.0 * s * r).max(0.0);
        let den = q0 + disc.sqrt();
        let x = if den > 0.0 { 2.0 * r / den } else { 0.0 };
        self.tau[i] + x.clamp(0.0, h)
    }

    /// Mean service time, infinite for heavy tails.
    pub fn service_mean(&self) -> f64 {
        if self.is_degenerate() {
            return 0.0;
        }
        if self.heavy_tail {
            return f64::INFINITY;
        }
        let mut s = 0.0;
        for i in 0..self.tau.len() - 1 {
            let (a, b) = (self.tau[i], self.tau[i + 1]);
            s += 0.5 * (b - a) * (a * self.q[i] + b * self.q[i + 1]);
        }
        let end = self.report.tau_end;
        let qe = *self.q.last().expect("non-empty grid");
        s += match self.tail {
            TailModel::Exponential { rate } => qe * (end / rate + 1.0 / (rate * rate)),
            TailModel::Power { gamma } => qe * end * end / (gamma - 2.0),
            TailModel::Negligible => 0.0,
        };
        s / self.total()
    }
}

fn geometric_grid(cfg: &GridConfig) -> Vec<f64> {
    let n = cfg.points.max(16);
    let (lo, hi) = (cfg.tau_min.ln(), cfg.tau_max.ln());
    let mut v = Vec::with_capacity(n + 1);
    v.push(0.0);
    for i in 0..n {
        v.push((lo + (hi - lo) * i as f64 / (n - 1) as f64).exp());
    }
    v
}

// Least-squares slope of y against x.
fn slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Exponential decay of q is expected exactly when there is an atom at E and
/// no density piece starts at E (a spectral gap above the atom).
fn expects_exponential_tail(m: &ProbabilityMeasure) -> bool {
    let e = m.infimum_support();
    m.atom_at_infimum() > 0.0 && m.densities.iter().all(|d| d.kind.inf() > e)
}

/// Tabulates q on a geometric grid, fits the tail on the last decade and
/// checks that the total intensity equals `m - E`.
pub fn build_renewal_transform(ev: &LaplaceEvaluator, cfg: &GridConfig) -> Result<RenewalTransform> {
    if !(cfg.tau_min > 0.0 && cfg.tau_max > cfg.tau_min * 10.0) {
        return Err(Error::invalid("grid needs 0 < tau_min and tau_max >= 10 tau_min"));
    }
    let measure = ev.measure();
    let e = ev.e();
    let m = measure.mean();
    let beta = m - e;
    if measure.atoms.len() == 1 && measure.densities.is_empty() {
        return Ok(RenewalTransform::degenerate(e));
    }
    let grid = geometric_grid(cfg);
    let q_all: Vec<f64> = grid.par_iter().map(|&t| ev.tilted_stats(t).var_t).collect();
    let qmax = q_all.iter().copied().fold(0.0, f64::max);
    let floor = 1e-280 * qmax.max(f64::MIN_POSITIVE);
    let last = q_all.iter().rposition(|&v| v > floor).unwrap_or(0).max(1);
    let tau: Vec<f64> = grid[..=last].to_vec();
    let q: Vec<f64> = q_all[..=last].to_vec();
    let mut cum = vec![0.0; tau.len()];
    for i in 1..tau.len() {
        cum[i] = cum[i - 1] + 0.5 * (tau[i] - tau[i - 1]) * (q[i] + q[i - 1]);
    }
    let grid_mass = cum[cum.len() - 1];
    let tau_end = tau[tau.len() - 1];
    let q_end = q[q.len() - 1];
    let underflowed = last + 1 < grid.len();

    let fit_idx: Vec<usize> = (0..tau.len()).filter(|&i| tau[i] >= tau_end / 10.0 && q[i] > 0.0).collect();
    let (tail, tail_mass) = if underflowed || fit_idx.len() < 4 {
        (TailModel::Negligible, 0.0)
    } else if expects_exponential_tail(measure) {
        let x: Vec<f64> = fit_idx.iter().map(|&i| tau[i]).collect();
        let y: Vec<f64> = fit_idx.iter().map(|&i| q[i].ln()).collect();
        let rate = -slope(&x, &y);
        if rate > 0.0 {
            (TailModel::Exponential { rate }, q_end / rate)
        } else {
            (TailModel::Negligible, 0.0)
        }
    } else {
        let x: Vec<f64> = fit_idx.iter().map(|&i| tau[i].ln()).collect();
        let y: Vec<f64> = fit_idx.iter().map(|&i| q[i].ln()).collect();
        let gamma = -slope(&x, &y);
        if gamma <= 1.0 {
            return Err(Error::gate(format!(
                "service intensity decays like tau^-{gamma:.3}; total intensity is not finite"
            )));
        }
        (TailModel::Power { gamma }, q_end * tau_end / (gamma - 1.0))
    };
    let heavy_tail = matches!(tail, TailModel::Power { gamma } if gamma <= 2.05);
    let total = grid_mass + tail_mass;
    let rel_mismatch = (total - beta).abs() / beta;
    let report = TruncationReport { beta, grid_mass, tail_mass, rel_mismatch, tau_end };
    if rel_mismatch > cfg.rtol {
        return Err(Error::gate(format!(
            "integral of q is {total} but m - E = {beta} (rel {rel_mismatch:e} > {})",
            cfg.rtol
        )));
    }
    Ok(RenewalTransform { e, m, beta, tau, q, cum, tail, heavy_tail, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::fixtures::*;
    use crate::rng::path_rng;
    use crate::stats::ks_test;
    use approx::assert_relative_eq;

    #[test]
    fn dirac_is_degenerate() {
        let ev = LaplaceEvaluator::new(ProbabilityMeasure::dirac(0.0));
        let tr = build_renewal_transform(&ev, &GridConfig::default()).unwrap();
        assert!(tr.is_degenerate());
    }

    #[test]
    fn two_atom_intensity() {
        let ev = LaplaceEvaluator::new(two_atom(0.5, 1.0));
        let tr = build_renewal_transform(&ev, &GridConfig::default()).unwrap();
        assert_relative_eq!(tr.beta, 0.5);
        for (t, q) in tr.tau.iter().zip(&tr.q).step_by(97) {
            let p = (-t).exp() / (1.0 + (-t).exp());
            assert_relative_eq!(*q, p * (1.0 - p), max_relative = 1e-10);
        }
        assert!(tr.report.rel_mismatch < 1e-5);
        assert!(!tr.heavy_tail);
    }

    #[test]
    fn exponential_intensity_is_heavy() {
        let ev = LaplaceEvaluator::new(exponential(1.0));
        let tr = build_renewal_transform(&ev, &GridConfig::default()).unwrap();
        assert_relative_eq!(tr.beta, 1.0, epsilon = 1e-12);
        assert!(tr.heavy_tail);
        match tr.tail {
            TailModel::Power { gamma } => assert!((gamma - 2.0).abs() < 1e-2),
            other => panic!("unexpected tail {other:?}"),
        }
        // closed-form service CDF: 1 - 1/(1+τ)
        for t in [0.01, 1.0, 30.0, 5e3, 1e6] {
            assert_relative_eq!(tr.service_cdf(t), 1.0 - 1.0 / (1.0 + t), epsilon = 2e-5);
        }
    }

    #[test]
    fn service_sampler_passes_ks() {
        let ev = LaplaceEvaluator::new(atom_plus_uniform(0.5, 1.0, 2.0));
        let tr = build_renewal_transform(&ev, &GridConfig::default()).unwrap();
        let mut rng = path_rng(3, 0);
        let xs: Vec<f64> = (0..20000).map(|_| tr.sample_service(&mut rng)).collect();
        let r = ks_test(&xs, |x| tr.service_cdf(x));
        assert!(r.p_value > 0.01, "{r:?}");
    }

    #[test]
    fn intensity_integrates_to_arrival_rate() {
        for m in [atom_plus_uniform(0.3, 0.5, 2.0), power_edge(0.5), atom_plus_power_edge(0.5, 0.5)] {
            let ev = LaplaceEvaluator::new(m.clone());
            let tr = build_renewal_transform(&ev, &GridConfig::default()).unwrap();
            assert!(tr.report.rel_mismatch < 1e-3, "{m:?} {:?}", tr.report);
        }
    }
}
