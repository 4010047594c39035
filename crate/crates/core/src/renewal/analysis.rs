use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::sim::{sample_paths, FirstCycle, SimConfig, SimStats};
use super::transform::RenewalTransform;
use crate::error::{Error, Result};
use crate::laplace::LaplaceEvaluator;
use crate::quad::Adaptive;
use crate::stats::Estimate;
use crate::wiener::quotient_moments;

/// `1 / (1 + β E[a1])` with a delta-method standard error.
pub fn atom_via_renewal(stats: &SimStats) -> Estimate {
    if stats.degenerate {
        return Estimate { value: 1.0, se: 0.0, n: stats.n_paths as u64 };
    }
    let b = stats.beta;
    let a = stats.a1.value;
    if !a.is_finite() {
        return Estimate { value: 0.0, se: 0.0, n: stats.a1.n };
    }
    let d = 1.0 + b * a;
    Estimate { value: 1.0 / d, se: b * stats.a1.se / (d * d), n: stats.a1.n }
}

/// Second-order estimate with its reliability flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverseMomentRenewal {
    pub estimate: Estimate,
    /// False when censored cycles carry more than the allowed share of a1².
    pub stable: bool,
    pub censored_share: f64,
    pub applicable: bool,
}

/// `β E[a1²] / (2 (1 + β E[a1])²)`, i.e. `∫ μ(dx) / (x - E)`.
pub fn inverse_moment_via_renewal(stats: &SimStats, max_censored_share: f64) -> InverseMomentRenewal {
    if stats.degenerate {
        return InverseMomentRenewal {
            estimate: Estimate { value: 0.0, se: 0.0, n: 0 },
            stable: true,
            censored_share: 0.0,
            applicable: false,
        };
    }
    let b = stats.beta;
    let a = stats.a1.value;
    let s = stats.a1_sq.value;
    let d = 1.0 + b * a;
    let value = b * s / (2.0 * d * d);
    // gradient in (E[a1], E[a1²])
    let ga = -b * b * s / (d * d * d);
    let gs = b / (2.0 * d * d);
    let n = stats.a1.n.max(1) as f64;
    let var = ga * ga * stats.a1.se.powi(2) + gs * gs * stats.a1_sq.se.powi(2) + 2.0 * ga * gs * stats.cov_a1_a1sq / n;
    InverseMomentRenewal {
        estimate: Estimate { value, se: var.max(0.0).sqrt(), n: stats.a1.n },
        stable: stats.censored_a1sq_share <= max_censored_share,
        censored_share: stats.censored_a1sq_share,
        applicable: true,
    }
}

/// Both sides of the Stieltjes identity at one point z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StieltjesCheck {
    pub z: Complex64,
    pub lhs: Complex64,
    pub rhs: Complex64,
    /// Standard error of `|rhs|` fluctuations (complex modulus).
    pub rhs_se: f64,
    /// Upper bound on the bias from cycles censored at the horizon.
    pub censor_bias_bound: f64,
    pub n: usize,
}

impl StieltjesCheck {
    pub fn z_score(&self) -> f64 {
        let d = (self.lhs - self.rhs).norm();
        if d == 0.0 {
            0.0
        } else if self.rhs_se > 0.0 {
            d / self.rhs_se
        } else {
            f64::INFINITY
        }
    }
}

/// `∫ μ(dx)/(x - z)` against `(m - z)^{-1} (1 - E[e^{(z-E) T1} 1{T1 < ∞}])^{-1}`.
pub fn stieltjes_check(
    ev: &LaplaceEvaluator,
    tr: &RenewalTransform,
    cycles: &[FirstCycle],
    horizon: f64,
    z: Complex64,
) -> Result<StieltjesCheck> {
    let e = ev.e();
    if z.re >= e {
        return Err(Error::invalid(format!("Stieltjes check needs Re z < E = {e}, got {z}")));
    }
    let q = Adaptive::default().with_rel(1e-12);
    let m = ev.measure();
    let re = m.integrate(|x| ((x - z).inv()).re, &q);
    let im = m.integrate(|x| ((x - z).inv()).im, &q);
    let lhs = Complex64::new(re, im);
    let c = (Complex64::new(tr.m, 0.0) - z).inv();
    let n = cycles.len();
    if tr.is_degenerate() || n == 0 {
        return Ok(StieltjesCheck { z, lhs, rhs: c, rhs_se: 0.0, censor_bias_bound: 0.0, n });
    }
    let mut sum = Complex64::new(0.0, 0.0);
    let (mut s2r, mut s2i) = (0.0, 0.0);
    let mut n_cens = 0usize;
    for f in cycles {
        let y = if f.censored() {
            n_cens += 1;
            Complex64::new(0.0, 0.0)
        } else {
            ((z - e) * f.t1()).exp()
        };
        sum += y;
        s2r += y.re * y.re;
        s2i += y.im * y.im;
    }
    let nf = n as f64;
    let phi = sum / nf;
    let var_re = (s2r / nf - phi.re * phi.re).max(0.0) * nf / (nf - 1.0);
    let var_im = (s2i / nf - phi.im * phi.im).max(0.0) * nf / (nf - 1.0);
    let one = Complex64::new(1.0, 0.0);
    let rhs = c / (one - phi);
    let grad = (c / ((one - phi) * (one - phi))).norm();
    let rhs_se = grad * ((var_re + var_im) / nf).sqrt();
    let censor_bias_bound = grad * (n_cens as f64 / nf) * ((z.re - e) * horizon).exp();
    Ok(StieltjesCheck { z, lhs, rhs, rhs_se, censor_bias_bound, n })
}

/// Diagnostic classes for the behaviour of μ at E.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SingularityClass {
    AtomFull,
    AtomPartial,
    NoAtomHeavy,
    NoAtomLight,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifyThresholds {
    /// Censored share of first cycles counted as "positive" at both horizons.
    pub light_censor_min: f64,
    /// Censored share below which cycles count as complete.
    pub complete_censor_max: f64,
    /// Censored share at 2T relative to T that still counts as stable.
    pub stable_ratio: f64,
    /// Relative growth of the mean first active period flagged as divergence.
    pub growth: f64,
}

impl Default for ClassifyThresholds {
    fn default() -> Self {
        ClassifyThresholds { light_censor_min: 0.05, complete_censor_max: 0.01, stable_ratio: 0.7, growth: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub class: SingularityClass,
    pub notes: Vec<String>,
}

/// Heuristic classification from simulations at horizons T and 2T.
pub fn classify_singularity(at_t: &SimStats, at_2t: &SimStats, th: &ClassifyThresholds) -> Classification {
    let mut notes = vec!["diagnostic: finite-horizon proxy for limiting laws".to_string()];
    if at_t.degenerate || (at_t.p_no_arrival.value == 1.0 && at_2t.p_no_arrival.value == 1.0) {
        notes.push("no first arrival observed".into());
        return Classification { class: SingularityClass::AtomFull, notes };
    }
    let c1 = at_t.p_t1_censored.value - at_t.p_no_arrival.value;
    let c2 = at_2t.p_t1_censored.value - at_2t.p_no_arrival.value;
    let a1 = at_t.a1.value;
    let a2 = at_2t.a1.value;
    let growth = if a1 > 0.0 { a2 / a1 - 1.0 } else { 0.0 };
    notes.push(format!("censored active share: {c1:.4} at T={}, {c2:.4} at 2T", at_t.horizon));
    notes.push(format!("mean first active period: {a1:.4} at T, {a2:.4} at 2T"));
    let complete = c1 < th.complete_censor_max && c2 < th.complete_censor_max;
    let light = c1 >= th.light_censor_min && c2 >= th.light_censor_min && c2 >= th.stable_ratio * c1;
    let class = if complete && growth.abs() < th.growth {
        SingularityClass::AtomPartial
    } else if light {
        SingularityClass::NoAtomLight
    } else if growth >= th.growth && (complete || c2 < th.stable_ratio * c1.max(th.complete_censor_max)) {
        SingularityClass::NoAtomHeavy
    } else {
        notes.push("horizon doubling changed the picture".into());
        SingularityClass::Inconclusive
    };
    Classification { class, notes }
}

/// Exact conditioned dormancy next to the unconditioned Monte Carlo value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DormancyCheck {
    pub t: f64,
    pub kappa: f64,
    pub conditioned_exact: f64,
    pub unconditioned_mc: Estimate,
}

/// `P_t(X_{κt} = 0)` from the transform next to a simulated `P(X_{κt} = 0)`.
pub fn conditioned_dormancy_check(
    ev: &LaplaceEvaluator,
    tr: &RenewalTransform,
    t: f64,
    kappa: f64,
    n_paths: usize,
    seed: u64,
    workers: usize,
) -> Result<DormancyCheck> {
    if !(t > 0.0 && kappa > 0.0 && kappa < 1.0) {
        return Err(Error::invalid("need t > 0 and kappa in (0, 1)"));
    }
    let s = kappa * t;
    let cfg = SimConfig { horizon: s, n_paths, seed, workers, t_grid: vec![s], ..Default::default() };
    let out = sample_paths(tr, &cfg)?;
    Ok(DormancyCheck {
        t,
        kappa,
        conditioned_exact: ev.log_quotient(s, t).exp(),
        unconditioned_mc: out.stats.p_dormant[0],
    })
}

/// `V_t[D_t] / E_t[D_t]` from the exact quotient integrals on an n-grid.
pub fn dormancy_variance_ratio_exact(ev: &LaplaceEvaluator, t: f64, n: usize) -> f64 {
    let qm = quotient_moments(ev, t, n);
    t * qm.numerator_scaled() / qm.a1
}
