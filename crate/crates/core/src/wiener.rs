//! Atom-mass and inverse-moment estimators built from partition-function
//! quotients `Z_s Z_{t-s} / Z_t`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laplace::LaplaceEvaluator;
use crate::measure::DensityKind;
use crate::quad::{Adaptive, Compensated};

/// `Z_{κt} Z_{(1-κ)t} / Z_t`.
pub fn atom_quotient_estimate(ev: &LaplaceEvaluator, kappa: f64, t: f64) -> f64 {
    assert!(kappa > 0.0 && kappa < 1.0, "kappa must lie in (0, 1)");
    assert!(t > 0.0);
    ev.log_quotient(kappa * t, t).exp()
}

// Width of the initial drop of s ↦ Z_s Z_{t-s}/Z_t near s = 0.
fn drop_scale(ev: &LaplaceEvaluator, t: f64) -> f64 {
    let spread = (ev.tilted_stats(0.0).mean_t - ev.e()).max(1e-12);
    (0.05 / spread).min(0.5 * t)
}

fn average_quad() -> Adaptive {
    Adaptive::default().with_rel(1e-12).with_abs(1e-16)
}

/// `(1/t) ∫_0^t Z_s Z_{t-s} / Z_t ds`, folded onto [0, t/2] by symmetry.
pub fn atom_average_estimate(ev: &LaplaceEvaluator, t: f64) -> f64 {
    assert!(t > 0.0);
    let f = |s: f64| ev.log_quotient(s, t).exp();
    let half = average_quad().integrate_graded(&f, 0.0, 0.5 * t, &[0.0], drop_scale(ev, t));
    (2.0 * half / t).min(1.0)
}

/// `A_1(t) = ∫_0^t Z_{t-s} Z_s / Z_t ds` by adaptive quadrature.
pub fn a1_adaptive(ev: &LaplaceEvaluator, t: f64) -> f64 {
    t * atom_average_estimate(ev, t)
}

/// `A_2(t) = ∫_0^t ∫_0^s Z_{t-s} Z_{s-r} Z_r / Z_t dr ds` by nested adaptive
/// quadrature. Expensive; meant for small discrete models and cross-checks.
pub fn a2_adaptive(ev: &LaplaceEvaluator, t: f64) -> f64 {
    let q = Adaptive::default().with_rel(1e-11).with_abs(1e-15);
    let h = drop_scale(ev, t);
    let lt = ev.log_z_shifted(t);
    let inner = |s: f64| {
        if s <= 0.0 {
            return 0.0;
        }
        let ls = ev.log_z_shifted(t - s);
        let g = |r: f64| (ls + ev.log_z_shifted(s - r) + ev.log_z_shifted(r) - lt).exp();
        q.integrate_graded(&g, 0.0, s, &[0.0, s], h.min(0.5 * s))
    };
    q.integrate_graded(&inner, 0.0, t, &[0.0, t], h)
}

/// Kernel `f_t(x, y) = (e^{-tx} - e^{-ty}) / (t (y - x))`, `e^{-ty}` on the diagonal.
pub fn fubini_kernel(t: f64, x: f64, y: f64) -> f64 {
    let lo = x.min(y);
    let u = t * (x - y).abs();
    let phi = if u == 0.0 { 1.0 } else { -(-u).exp_m1() / u };
    (-t * lo).exp() * phi
}

/// `(1/t) ∫_0^t Z_s Z_{t-s} ds` computed as the double integral of the
/// Fubini kernel against μ⊗μ, with the measure shifted so that E = 0.
///
/// The returned value is in units of `e^{-tE}`; it should equal
/// `atom_average_estimate(t) * exp(log_z_shifted(t))`.
pub fn fubini_average_oracle(ev: &LaplaceEvaluator, t: f64) -> f64 {
    assert!(t > 0.0);
    let m = ev.measure().translate(-ev.e());
    let q = Adaptive::default().with_rel(1e-12).with_abs(1e-18);
    let h = 0.5 / t;
    let edges: Vec<f64> = m.atoms.iter().map(|a| a.location).chain(m.densities.iter().map(|d| d.kind.inf())).collect();
    let k = |x: f64, y: f64| fubini_kernel(t, x, y);
    let inner = |x: f64| -> f64 {
        let mut acc = Compensated::default();
        for a in &m.atoms {
            acc.add(a.mass * k(x, a.location));
        }
        for d in &m.densities {
            let mut an = edges.clone();
            an.push(x);
            acc.add(d.weight * d.kind.integrate_graded(|y| k(x, y), 0.0, &an, h, &q));
        }
        acc.sum()
    };
    let mut acc = Compensated::default();
    for a in &m.atoms {
        acc.add(a.mass * inner(a.location));
    }
    for d in &m.densities {
        acc.add(d.weight * integrate_piece(&d.kind, &inner, &edges, h, &q));
    }
    acc.sum()
}

fn integrate_piece<F: Fn(f64) -> f64>(kind: &DensityKind, f: &F, anchors: &[f64], h: f64, q: &Adaptive) -> f64 {
    kind.integrate_graded(f, 0.0, anchors, h, q)
}

/// The two quotient integrals entering the second-order estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuotientMoments {
    pub t: f64,
    pub n: usize,
    /// `A_1 / t`
    pub a1: f64,
    /// `A_2 / t²`
    pub a2: f64,
}

impl QuotientMoments {
    /// `2 A_2 - A_1²` divided by `t²`, in compensated arithmetic.
    pub fn numerator_scaled(&self) -> f64 {
        let mut c = Compensated::default();
        c.add(2.0 * self.a2);
        c.add(-self.a1 * self.a1);
        c.sum()
    }

    /// `(2 A_2 - A_1²) / (2 A_1)`.
    pub fn estimate(&self) -> f64 {
        self.t * self.numerator_scaled() / (2.0 * self.a1)
    }
}

// Composite Simpson weights on i+1 equispaced nodes (3/8 rule for the final
// three intervals when i is odd).
fn simpson_weights(i: usize, h: f64, w: &mut Vec<f64>) {
    w.clear();
    w.resize(i + 1, 0.0);
    match i {
        0 => {}
        1 => {
            w[0] = 0.5 * h;
            w[1] = 0.5 * h;
        }
        2 => {
            w[0] = h / 3.0;
            w[1] = 4.0 * h / 3.0;
            w[2] = h / 3.0;
        }
        _ => {
            let simpson_end = if i % 2 == 0 { i } else { i - 3 };
            for j in (0..simpson_end).step_by(2) {
                w[j] += h / 3.0;
                w[j + 1] += 4.0 * h / 3.0;
                w[j + 2] += h / 3.0;
            }
            if i % 2 == 1 {
                let c = 3.0 * h / 8.0;
                w[i - 3] += c;
                w[i - 2] += 3.0 * c;
                w[i - 1] += 3.0 * c;
                w[i] += c;
            }
        }
    }
}

/// `A_1` and `A_2` on an n×n triangular grid with Simpson weights.
///
/// All arguments of `Z` are grid multiples of `t/n`, so only n+1 transform
/// values are needed.
pub fn quotient_moments(ev: &LaplaceEvaluator, t: f64, n: usize) -> QuotientMoments {
    assert!(t > 0.0 && n >= 2);
    let h = t / n as f64;
    let lz: Vec<f64> = (0..=n).map(|k| ev.log_z_shifted(k as f64 * h)).collect();
    let lt = lz[n];
    let mut w = Vec::new();
    let mut wo = Vec::new();
    simpson_weights(n, h, &mut wo);
    let mut a1 = Compensated::default();
    let mut a2 = Compensated::default();
    for i in 0..=n {
        let lts = lz[n - i];
        a1.add(wo[i] * (lts + lz[i] - lt).exp());
        if i == 0 {
            continue;
        }
        simpson_weights(i, h, &mut w);
        let mut inner = Compensated::default();
        for j in 0..=i {
            inner.add(w[j] * (lts + lz[i - j] + lz[j] - lt).exp());
        }
        a2.add(wo[i] * inner.sum());
    }
    QuotientMoments { t, n, a1: a1.sum() / t, a2: a2.sum() / (t * t) }
}

/// Result of the second-order estimator with its grid-refinement check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverseMomentRun {
    pub t: f64,
    pub value: f64,
    pub value_refined: f64,
    pub rel_refinement: f64,
    pub coarse: QuotientMoments,
    pub fine: QuotientMoments,
}

/// Default grid size for [`inverse_moment_estimate`].
pub const DEFAULT_GRID: usize = 512;
/// Allowed relative change between grids n and 2n.
pub const REFINEMENT_RTOL: f64 = 1e-3;

/// `(2 A_2 - A_1²) / (2 A_1)` on an n-grid, reported only when the 2n grid
/// agrees within [`REFINEMENT_RTOL`].
pub fn inverse_moment_estimate(ev: &LaplaceEvaluator, t: f64, n: usize) -> Result<InverseMomentRun> {
    let coarse = quotient_moments(ev, t, n);
    let fine = quotient_moments(ev, t, 2 * n);
    for m in [&coarse, &fine] {
        let num = m.numerator_scaled();
        // Simpson error on these smooth integrands is far below this floor.
        if num < -1e-9 * (2.0 * m.a2) {
            return Err(Error::IllConditioned {
                what: format!("2 A2 - A1^2 at t = {t}, n = {}", m.n),
                lhs: 2.0 * m.a2 * t * t,
                rhs: m.a1 * m.a1 * t * t,
            });
        }
    }
    let value = coarse.estimate().max(0.0);
    let value_refined = fine.estimate().max(0.0);
    let scale = value_refined.abs().max(value.abs());
    let rel = if scale == 0.0 { 0.0 } else { (value - value_refined).abs() / scale };
    if rel > REFINEMENT_RTOL {
        return Err(Error::gate(format!(
            "inverse-moment grid refinement: n={n} gives {value}, n={} gives {value_refined} (rel {rel:e})",
            2 * n
        )));
    }
    Ok(InverseMomentRun { t, value, value_refined, rel_refinement: rel, coarse, fine })
}

/// Which estimator a schedule drives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "estimator", rename_all = "kebab-case")]
pub enum Estimator {
    Quotient { kappa: f64 },
    Average,
    InverseMoment { n: usize },
}

impl Estimator {
    pub fn eval(&self, ev: &LaplaceEvaluator, t: f64) -> Result<f64> {
        match *self {
            Estimator::Quotient { kappa } => Ok(atom_quotient_estimate(ev, kappa, t)),
            Estimator::Average => Ok(atom_average_estimate(ev, t)),
            Estimator::InverseMoment { n } => inverse_moment_estimate(ev, t, n).map(|r| r.value),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Trend {
    Converged,
    Decaying,
    Unsettled,
}

/// Values of an estimator along an increasing schedule of times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorRun {
    pub estimator: Estimator,
    pub t_schedule: Vec<f64>,
    pub values: Vec<f64>,
    pub converged: bool,
    pub converged_at: Option<f64>,
    pub trend: Trend,
    /// Linear extrapolation in 1/t through the last two points.
    pub extrapolated: Option<f64>,
    /// Largest increase between successive values (positive means a
    /// violation of monotone decrease).
    pub max_increase: f64,
}

/// Evaluates the estimator along the schedule and declares convergence once
/// `window` successive relative changes fall below `rtol`.
pub fn run_schedule(
    ev: &LaplaceEvaluator,
    estimator: Estimator,
    t_schedule: &[f64],
    window: usize,
    rtol: f64,
) -> Result<EstimatorRun> {
    if t_schedule.is_empty() {
        return Err(Error::invalid("empty schedule"));
    }
    if t_schedule.windows(2).any(|w| w[1] <= w[0]) || t_schedule[0] <= 0.0 {
        return Err(Error::invalid("schedule must be positive and strictly increasing"));
    }
    let values = t_schedule.iter().map(|&t| estimator.eval(ev, t)).collect::<Result<Vec<f64>>>()?;
    Ok(summarize(estimator, t_schedule.to_vec(), values, window.max(1), rtol))
}

fn summarize(estimator: Estimator, ts: Vec<f64>, values: Vec<f64>, window: usize, rtol: f64) -> EstimatorRun {
    let mut streak = 0;
    let mut converged_at = None;
    let mut max_increase = f64::NEG_INFINITY;
    let mut shrinking = 0usize;
    for i in 1..values.len() {
        let (a, b) = (values[i - 1], values[i]);
        max_increase = max_increase.max(b - a);
        let scale = b.abs().max(a.abs());
        let rel = if scale == 0.0 { 0.0 } else { (b - a).abs() / scale };
        if rel < rtol {
            streak += 1;
            if streak >= window && converged_at.is_none() {
                converged_at = Some(ts[i]);
            }
        } else {
            streak = 0;
        }
        if b < a && rel > 0.1 {
            shrinking += 1;
        }
    }
    if values.len() == 1 {
        max_increase = 0.0;
    }
    // Constant sequences have nothing to wait for.
    if values.len() == 1 || values.windows(2).all(|w| w[0] == w[1]) {
        converged_at = Some(ts[0]);
    }
    let converged = converged_at.is_some();
    let trend = if converged {
        Trend::Converged
    } else if values.len() >= 3 && shrinking + 1 >= values.len() - 1 {
        Trend::Decaying
    } else {
        Trend::Unsettled
    };
    let extrapolated = if ts.len() >= 2 {
        let n = ts.len();
        let (t1, t2) = (ts[n - 2], ts[n - 1]);
        let (v1, v2) = (values[n - 2], values[n - 1]);
        Some((t2 * v2 - t1 * v1) / (t2 - t1))
    } else {
        None
    };
    EstimatorRun { estimator, t_schedule: ts, values, converged, converged_at, trend, extrapolated, max_increase }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::fixtures::*;
    use crate::measure::ProbabilityMeasure;
    use approx::assert_relative_eq;

    // Closed form of the averaged quotient for ρδ_0 + (1-ρ)δ_Δ.
    fn two_atom_average(rho: f64, d: f64, t: f64) -> f64 {
        let zt = rho + (1.0 - rho) * (-t * d).exp();
        let int = rho * rho * t
            + 2.0 * rho * (1.0 - rho) * (-(-t * d).exp_m1()) / d
            + (1.0 - rho).powi(2) * t * (-t * d).exp();
        int / (t * zt)
    }

    #[test]
    fn quotient_examples() {
        let ev = LaplaceEvaluator::new(ProbabilityMeasure::dirac(1.7));
        assert_eq!(atom_quotient_estimate(&ev, 0.3, 7.0), 1.0);
        let ev = LaplaceEvaluator::new(two_atom(0.5, 1.0));
        assert!((atom_quotient_estimate(&ev, 0.5, 20.0) - 0.5000454).abs() < 1e-7);
        let ev = LaplaceEvaluator::new(exponential(1.0));
        for t in [10.0f64, 100.0, 1000.0] {
            let want = (1.0 + t) / (1.0 + t / 2.0).powi(2);
            assert_relative_eq!(atom_quotient_estimate(&ev, 0.5, t), want, max_relative = 1e-11);
        }
    }

    #[test]
    fn average_matches_closed_form() {
        for (rho, d) in [(0.5, 1.0), (0.2, 0.5), (0.8, 1.0)] {
            let ev = LaplaceEvaluator::new(two_atom(rho, d));
            for t in [1.0, 5.0, 40.0, 400.0] {
                let got = atom_average_estimate(&ev, t);
                assert!((got - two_atom_average(rho, d, t)).abs() < 1e-10, "rho={rho} d={d} t={t}");
            }
        }
        let ev = LaplaceEvaluator::new(ProbabilityMeasure::dirac(0.0));
        assert_relative_eq!(atom_average_estimate(&ev, 13.0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn average_of_exponential_decays() {
        let ev = LaplaceEvaluator::new(exponential(1.0));
        let a2 = atom_average_estimate(&ev, 1e2);
        let a3 = atom_average_estimate(&ev, 1e3);
        assert!(a3 <= a2);
        assert!(a3 < 0.05);
    }

    #[test]
    fn average_dominates_scaled_quotient() {
        let ev = LaplaceEvaluator::new(atom_plus_uniform(0.4, 0.5, 2.0));
        for t in [2.0, 20.0, 90.0] {
            let avg = atom_average_estimate(&ev, t);
            for kappa in [0.1, 0.3, 0.5] {
                assert!(avg >= kappa * atom_quotient_estimate(&ev, kappa, t) - 1e-12);
            }
        }
    }

    #[test]
    fn fubini_two_atom_exact_sum() {
        let ev = LaplaceEvaluator::new(two_atom(0.5, 1.0));
        let e1 = (-1f64).exp();
        let want = 0.25 * (1.0 + 2.0 * (1.0 - e1) + e1);
        assert_relative_eq!(fubini_average_oracle(&ev, 1.0), want, max_relative = 1e-14);
        for t in [1.0, 5.0, 20.0] {
            let route = atom_average_estimate(&ev, t) * ev.log_z_shifted(t).exp();
            assert!((fubini_average_oracle(&ev, t) - route).abs() < 1e-9);
        }
    }

    #[test]
    fn fubini_matches_time_route_on_densities() {
        for m in [atom_plus_uniform(0.5, 1.0, 2.0), exponential(1.0), atom_plus_power_edge(0.3, 0.5)] {
            let ev = LaplaceEvaluator::new(m);
            for t in [0.5, 4.0, 30.0] {
                let route = atom_average_estimate(&ev, t) * ev.log_z_shifted(t).exp();
                let oracle = fubini_average_oracle(&ev, t);
                assert_relative_eq!(oracle, route, max_relative = 1e-8);
            }
        }
    }

    #[test]
    fn dirac_inverse_moment_is_zero() {
        let ev = LaplaceEvaluator::new(ProbabilityMeasure::dirac(0.0));
        let q = quotient_moments(&ev, 10.0, 64);
        assert_relative_eq!(q.a1, 1.0, epsilon = 1e-13);
        assert_relative_eq!(q.a2, 0.5, epsilon = 1e-13);
        let r = inverse_moment_estimate(&ev, 10.0, 64).unwrap();
        assert!(r.value.abs() < 1e-10);
    }

    #[test]
    fn grid_moments_match_adaptive() {
        let ev = LaplaceEvaluator::new(two_atom(0.5, 1.0));
        let t = 6.0;
        let g = quotient_moments(&ev, t, 512);
        assert_relative_eq!(g.a1 * t, a1_adaptive(&ev, t), max_relative = 1e-9);
        assert_relative_eq!(g.a2 * t * t, a2_adaptive(&ev, t), max_relative = 1e-8);
    }

    #[test]
    fn simpson_weights_integrate_cubics() {
        let mut w = Vec::new();
        for i in 1..12 {
            let h = 0.3;
            simpson_weights(i, h, &mut w);
            let s: f64 = w.iter().enumerate().map(|(j, wj)| wj * (j as f64 * h).powi(if i == 1 { 1 } else { 3 })).sum();
            let top = i as f64 * h;
            let want = if i == 1 { top * top / 2.0 } else { top.powi(4) / 4.0 };
            assert_relative_eq!(s, want, max_relative = 1e-12);
        }
    }

    #[test]
    fn inverse_moment_moves_toward_oracle() {
        let ev = LaplaceEvaluator::new(atom_plus_uniform(0.5, 1.0, 2.0));
        let oracle = 0.5 * 2f64.ln();
        let v30 = inverse_moment_estimate(&ev, 30.0, 256).unwrap().value;
        let v100 = inverse_moment_estimate(&ev, 100.0, 512).unwrap().value;
        assert!((v100 - oracle).abs() < (v30 - oracle).abs());
        assert!((v100 - oracle).abs() / oracle < 0.03);
    }

    #[test]
    fn schedule_examples() {
        let ev = LaplaceEvaluator::new(ProbabilityMeasure::dirac(0.0));
        let r = run_schedule(&ev, Estimator::Average, &[1.0, 2.0], 2, 1e-4).unwrap();
        assert!(r.converged);
        assert_eq!(r.converged_at, Some(1.0));

        let ev = LaplaceEvaluator::new(two_atom(0.5, 1.0));
        let r = run_schedule(&ev, Estimator::Quotient { kappa: 0.5 }, &[10.0, 20.0, 40.0, 80.0], 2, 1e-4).unwrap();
        assert!(r.converged);
        assert!((r.values[3] - 0.5).abs() < 1e-4);

        let ev = LaplaceEvaluator::new(exponential(1.0));
        let ts: Vec<f64> = (1..=8).map(|k| 10f64 * 2f64.powi(k)).collect();
        let r = run_schedule(&ev, Estimator::Quotient { kappa: 0.5 }, &ts, 2, 1e-4).unwrap();
        assert!(!r.converged);
        assert_eq!(r.trend, Trend::Decaying);

        assert!(run_schedule(&ev, Estimator::Average, &[2.0, 1.0], 1, 1e-4).is_err());
    }

    #[test]
    fn translation_invariance() {
        let m = atom_plus_uniform(0.5, 1.0, 2.0);
        let a = LaplaceEvaluator::new(m.clone());
        let b = LaplaceEvaluator::new(m.translate(3.25));
        for t in [1.0, 10.0, 50.0] {
            assert_relative_eq!(
                atom_quotient_estimate(&a, 0.3, t),
                atom_quotient_estimate(&b, 0.3, t),
                max_relative = 1e-13
            );
            assert_relative_eq!(atom_average_estimate(&a, t), atom_average_estimate(&b, t), max_relative = 1e-13);
        }
    }
}
