//! Log-domain Laplace transform `Z_t = ∫ exp(-t x) μ(dx)` and tilted moments.

use std::collections::HashMap;
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use crate::measure::ProbabilityMeasure;
use crate::quad::Adaptive;
use crate::stats::log_sum_exp;

/// Mean and variance of the tilted measure `exp(-t x) μ(dx) / Z_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TiltedStats {
    pub t: f64,
    pub mean_t: f64,
    pub var_t: f64,
}

// One component's share of the shifted transform: log weight and local moments.
#[derive(Debug, Clone, Copy)]
struct Term {
    logw: f64,
    mean: f64,
    var: f64,
}

/// Cached evaluator of `log Z_t`. The cache tolerates concurrent fills since
/// every write stores the same value for a given `t`.
#[derive(Debug)]
pub struct LaplaceEvaluator {
    measure: ProbabilityMeasure,
    e: f64,
    quad: Adaptive,
    cache: RwLock<HashMap<u64, f64>>,
}

impl Clone for LaplaceEvaluator {
    fn clone(&self) -> Self {
        LaplaceEvaluator {
            measure: self.measure.clone(),
            e: self.e,
            quad: self.quad,
            cache: RwLock::new(self.cache.read().expect("cache poisoned").clone()),
        }
    }
}

impl LaplaceEvaluator {
    pub fn new(measure: ProbabilityMeasure) -> Self {
        let e = measure.infimum_support();
        LaplaceEvaluator { measure, e, quad: Adaptive::default().with_rel(1e-13), cache: RwLock::new(HashMap::new()) }
    }

    pub fn measure(&self) -> &ProbabilityMeasure {
        &self.measure
    }

    /// Cached support infimum E.
    pub fn e(&self) -> f64 {
        self.e
    }

    fn terms(&self, t: f64, moments: bool) -> Vec<Term> {
        let e = self.e;
        let mut out = Vec::with_capacity(self.measure.atoms.len() + self.measure.densities.len());
        for a in &self.measure.atoms {
            out.push(Term { logw: a.mass.ln() - t * (a.location - e), mean: a.location - e, var: 0.0 });
        }
        for d in &self.measure.densities {
            let lo = d.kind.inf();
            let q = &self.quad;
            let i0 = d.kind.integrate_tilted(|_| 1.0, t, q);
            let (mean, var) = if moments && i0 > 0.0 {
                let m = d.kind.integrate_tilted(|x| x - lo, t, q) / i0;
                let v = d.kind.integrate_tilted(|x| (x - lo - m).powi(2), t, q) / i0;
                (lo - e + m, v.max(0.0))
            } else {
                (lo - e, 0.0)
            };
            out.push(Term { logw: d.weight.ln() - t * (lo - e) + i0.ln(), mean, var });
        }
        out
    }

    /// `log Z_t + t E`, i.e. the log of the transform of the measure shifted
    /// so that its infimum sits at zero. Always ≤ 0.
    pub fn log_z_shifted(&self, t: f64) -> f64 {
        assert!(t >= 0.0, "log_Z needs t >= 0, got {t}");
        if t == 0.0 {
            return 0.0;
        }
        let key = t.to_bits();
        if let Some(v) = self.cache.read().expect("cache poisoned").get(&key) {
            return *v;
        }
        let logs: Vec<f64> = self.terms(t, false).iter().map(|c| c.logw).collect();
        let v = log_sum_exp(&logs).min(0.0);
        self.cache.write().expect("cache poisoned").insert(key, v);
        v
    }

    /// `log Z_t`.
    pub fn log_z(&self, t: f64) -> f64 {
        self.log_z_shifted(t) - t * self.e
    }

    /// `-log Z_t / t`, which decreases to E.
    pub fn infsupp_estimate(&self, t: f64) -> f64 {
        assert!(t > 0.0);
        -self.log_z(t) / t
    }

    /// Mean and variance of the tilted measure. The variance combines
    /// per-component variances with the spread of component means, each taken
    /// about its own centre, to avoid `E[x²] - E[x]²` cancellation.
    pub fn tilted_stats(&self, t: f64) -> TiltedStats {
        assert!(t >= 0.0);
        let terms = self.terms(t, true);
        let logs: Vec<f64> = terms.iter().map(|c| c.logw).collect();
        let lse = log_sum_exp(&logs);
        let p: Vec<f64> = logs.iter().map(|l| (l - lse).exp()).collect();
        let mean: f64 = terms.iter().zip(&p).map(|(c, pi)| pi * c.mean).sum();
        let var: f64 = terms.iter().zip(&p).map(|(c, pi)| pi * (c.var + (c.mean - mean).powi(2))).sum();
        let var = if var < 0.0 && var > -1e-12 { 0.0 } else { var };
        TiltedStats { t, mean_t: mean + self.e, var_t: var }
    }

    /// `log(Z_s Z_{t-s} / Z_t)`, ≤ 0 with equality at the endpoints.
    pub fn log_quotient(&self, s: f64, t: f64) -> f64 {
        assert!(0.0 <= s && s <= t, "log_quotient needs 0 <= s <= t, got s={s}, t={t}");
        if s == 0.0 || s == t {
            return 0.0;
        }
        let v = self.log_z_shifted(s) + self.log_z_shifted(t - s) - self.log_z_shifted(t);
        v.min(0.0)
    }

    /// Number of cached transform values.
    pub fn cache_len(&self) -> usize {
        self.cache.read().expect("cache poisoned").len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::fixtures::*;
    use approx::assert_relative_eq;

    #[test]
    fn dirac_transform() {
        let ev = LaplaceEvaluator::new(ProbabilityMeasure::dirac(2.0));
        for t in [0.0, 0.5, 3.0, 100.0] {
            assert_eq!(ev.log_z(t), -2.0 * t);
        }
    }

    #[test]
    fn closed_forms() {
        let ev = LaplaceEvaluator::new(two_atom(0.5, 1.0));
        assert_relative_eq!(ev.log_z(1.0).exp(), 0.5 * (1.0 + (-1f64).exp()), epsilon = 1e-15);
        let ev = LaplaceEvaluator::new(exponential(1.0));
        assert_relative_eq!(ev.log_z(1.0).exp(), 0.5, epsilon = 1e-14);
        for t in [1e-3, 0.7, 10.0, 1e4] {
            assert_relative_eq!(ev.log_z(t), -(1.0 + t).ln(), max_relative = 1e-12);
        }
    }

    #[test]
    fn uniform_transform_at_large_t() {
        // Unif[1,2]: Z_t = (e^{-t} - e^{-2t}) / t
        let m = ProbabilityMeasure::new(vec![], vec![crate::Density { kind: uniform(1.0, 2.0), weight: 1.0 }]).unwrap();
        let ev = LaplaceEvaluator::new(m);
        for t in [0.1f64, 1.0, 30.0, 500.0, 5000.0] {
            let want = -t + (-(-t).exp_m1()).ln() - t.ln();
            assert_relative_eq!(ev.log_z(t), want, max_relative = 1e-12);
        }
    }

    #[test]
    fn infsupp_examples() {
        let ev = LaplaceEvaluator::new(two_atom(0.5, 1.0));
        let want = -(0.5 * (1.0 + (-50f64).exp())).ln() / 50.0;
        assert_relative_eq!(ev.infsupp_estimate(50.0), want, epsilon = 1e-15);
        assert!((ev.infsupp_estimate(50.0) - 0.013863).abs() < 1e-6);
        let ev = LaplaceEvaluator::new(exponential(1.0));
        assert_relative_eq!(ev.infsupp_estimate(100.0), 101f64.ln() / 100.0, max_relative = 1e-12);
    }

    #[test]
    fn tilted_two_atom() {
        let ev = LaplaceEvaluator::new(two_atom(0.5, 1.0));
        let s = ev.tilted_stats(0.0);
        assert_relative_eq!(s.mean_t, 0.5);
        assert_relative_eq!(s.var_t, 0.25);
        for t in [0.3f64, 5.0, 40.0, 700.0] {
            let p = (-t).exp() / (1.0 + (-t).exp());
            let s = ev.tilted_stats(t);
            assert_relative_eq!(s.var_t, p * (1.0 - p), max_relative = 1e-12);
            assert_relative_eq!(s.mean_t, p, max_relative = 1e-12);
        }
    }

    #[test]
    fn tilted_exponential() {
        let ev = LaplaceEvaluator::new(exponential(1.0));
        for t in [0.0, 1.0, 50.0, 1e4] {
            let s = ev.tilted_stats(t);
            assert_relative_eq!(s.var_t, (1.0 + t).powi(-2), max_relative = 1e-12);
        }
    }

    #[test]
    fn tilted_uniform_matches_direct_quadrature() {
        let m = atom_plus_uniform(0.5, 1.0, 2.0);
        let ev = LaplaceEvaluator::new(m.clone());
        let q = Adaptive::default();
        for t in [0.0, 0.5, 3.0] {
            let z = m.integrate(|x| (-t * x).exp(), &q);
            let m1 = m.integrate(|x| x * (-t * x).exp(), &q) / z;
            let m2 = m.integrate(|x| (x - m1).powi(2) * (-t * x).exp(), &q) / z;
            let s = ev.tilted_stats(t);
            assert_relative_eq!(s.mean_t, m1, max_relative = 1e-11);
            assert_relative_eq!(s.var_t, m2, max_relative = 1e-11);
        }
    }

    #[test]
    fn quotient_examples() {
        let ev = LaplaceEvaluator::new(two_atom(0.5, 1.0));
        assert_eq!(ev.log_quotient(0.0, 5.0), 0.0);
        assert_eq!(ev.log_quotient(5.0, 5.0), 0.0);
        let zs = 0.5 * (1.0 + (-10f64).exp());
        let zt = 0.5 * (1.0 + (-20f64).exp());
        assert_relative_eq!(ev.log_quotient(10.0, 20.0), (zs * zs / zt).ln(), max_relative = 1e-13);
        assert!((ev.log_quotient(10.0, 20.0).exp() - 0.5000454).abs() < 1e-7);
        let ev = LaplaceEvaluator::new(ProbabilityMeasure::dirac(3.0));
        assert_eq!(ev.log_quotient(1.3, 4.0), 0.0);
    }

    #[test]
    fn concurrent_cache_fills_agree() {
        use rayon::prelude::*;
        let ev = LaplaceEvaluator::new(atom_plus_uniform(0.3, 0.5, 2.0));
        let ts: Vec<f64> = (1..200).map(|i| i as f64 * 0.25).collect();
        let a: Vec<f64> = ts.par_iter().map(|&t| ev.log_z(t)).collect();
        let b: Vec<f64> = ts.iter().map(|&t| ev.log_z(t)).collect();
        assert_eq!(a, b);
        assert_eq!(ev.cache_len(), ts.len());
    }
}
