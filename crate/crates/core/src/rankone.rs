//! Rank-one perturbations `H_α = diag(x) + α ψψᵀ` of a discretized measure.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laplace::LaplaceEvaluator;
use crate::measure::{Atom, ProbabilityMeasure};
use crate::rng::path_rng;
use crate::stats::log_sum_exp;
use crate::wiener::{a1_adaptive, a2_adaptive};

/// Grid points `x_i` with weights `w_i`; the test vector is `ψ_i = √w_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankOneModel {
    pub x: Vec<f64>,
    pub w: Vec<f64>,
}

impl RankOneModel {
    pub fn new(x: Vec<f64>, w: Vec<f64>) -> Result<Self> {
        let m = RankOneModel { x, w };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.is_empty() || self.x.len() != self.w.len() {
            return Err(Error::invalid("rank-one model needs matching, non-empty x and w"));
        }
        if self.w.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::invalid("rank-one weights must be positive"));
        }
        let s: f64 = self.w.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("rank-one weights sum to {s}")));
        }
        if self.x.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::invalid("rank-one grid must be strictly increasing"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn psi(&self) -> DVector<f64> {
        DVector::from_iterator(self.w.len(), self.w.iter().map(|w| w.sqrt()))
    }

    /// The purely atomic measure `Σ w_i δ_{x_i}`.
    pub fn measure(&self) -> ProbabilityMeasure {
        ProbabilityMeasure {
            atoms: self.x.iter().zip(&self.w).map(|(&location, &mass)| Atom { location, mass }).collect(),
            densities: vec![],
        }
    }

    pub fn matrix(&self, alpha: f64) -> DMatrix<f64> {
        let psi = self.psi();
        let mut h = &psi * psi.transpose() * alpha;
        for (i, &x) in self.x.iter().enumerate() {
            h[(i, i)] += x;
        }
        h
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: RankOneModel = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    /// Seeded model with `n` points spread over [0, 3].
    pub fn random(n: usize, seed: u64) -> Self {
        let mut rng = path_rng(seed, 0);
        let mut x: Vec<f64> = (0..n).map(|_| 3.0 * rng.random::<f64>()).collect();
        x.sort_by(|a, b| a.total_cmp(b));
        x.dedup();
        let raw: Vec<f64> = x.iter().map(|_| 0.1 + rng.random::<f64>()).collect();
        let s: f64 = raw.iter().sum();
        let mut w: Vec<f64> = raw.iter().map(|r| r / s).collect();
        let drift: f64 = 1.0 - w.iter().sum::<f64>();
        w[0] += drift;
        RankOneModel { x, w }
    }
}

/// Discretizes μ: atoms are kept exactly, each density piece gets its share
/// of Gauss nodes. Fidelity is certified by matching `Z_t` up to `t_max`.
pub fn discretize(measure: &ProbabilityMeasure, n_nodes: usize, t_max: f64, rtol: f64) -> Result<RankOneModel> {
    let na = measure.atoms.len();
    let nd = measure.densities.len();
    if n_nodes < na + 2 * nd {
        return Err(Error::invalid(format!(
            "need at least {} nodes for {na} atoms and {nd} density pieces",
            na + 2 * nd
        )));
    }
    let mut pts: Vec<(f64, f64)> = measure.atoms.iter().map(|a| (a.location, a.mass)).collect();
    if let Some(per) = (n_nodes - na).checked_div(nd) {
        for d in &measure.densities {
            pts.extend(d.kind.nodes(per).into_iter().map(|(x, w)| (x, w * d.weight)));
        }
    }
    pts.retain(|p| p.1 > 0.0);
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut x: Vec<f64> = Vec::with_capacity(pts.len());
    let mut w: Vec<f64> = Vec::with_capacity(pts.len());
    for (xi, wi) in pts {
        match x.last() {
            Some(&last) if last == xi => *w.last_mut().expect("paired") += wi,
            _ => {
                x.push(xi);
                w.push(wi);
            }
        }
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    let model = RankOneModel { x, w };
    let cont = LaplaceEvaluator::new(measure.clone());
    let disc = LaplaceEvaluator::new(model.measure());
    let checks = 64;
    for i in 0..=checks {
        let t = t_max * i as f64 / checks as f64;
        let d = (cont.log_z(t) - disc.log_z(t)).abs();
        if d > rtol {
            return Err(Error::gate(format!(
                "discretized Z_t misses by {d:e} (relative) at t = {t}; more nodes needed for t_max = {t_max}"
            )));
        }
    }
    Ok(model)
}

/// Eigen data of `H_α` with ψ overlaps.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub alpha: f64,
    pub values: Vec<f64>,
    pub overlaps: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

/// Ground energy and ground-space weight of ψ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralResult {
    pub alpha: f64,
    pub e_alpha: f64,
    pub ground_vector: Vec<f64>,
    pub atom_mass_alpha: f64,
    pub degeneracy: usize,
}

/// Eigenpairs sorted by eigenvalue, with squared overlaps `⟨ψ, v_k⟩²`.
pub fn spectrum(model: &RankOneModel, alpha: f64) -> Spectrum {
    let eig = SymmetricEigen::new(model.matrix(alpha));
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let psi = model.psi();
    let n = order.len();
    let mut vectors = DMatrix::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    let mut overlaps = Vec::with_capacity(n);
    for (k, &j) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(j);
        vectors.set_column(k, &v);
        values.push(eig.eigenvalues[j]);
        overlaps.push(v.dot(&psi).powi(2));
    }
    Spectrum { alpha, values, overlaps, vectors }
}

/// Eigenvalue cluster tolerance relative to the spectral diameter.
pub const CLUSTER_RTOL: f64 = 1e-10;

pub fn spectral(model: &RankOneModel, alpha: f64) -> SpectralResult {
    let s = spectrum(model, alpha);
    let scale = (s.values[s.values.len() - 1] - s.values[0]).abs().max(s.values[0].abs()).max(1.0);
    let e = s.values[0];
    let deg = s.values.iter().take_while(|&&v| v - e <= CLUSTER_RTOL * scale).count();
    let mass: f64 = s.overlaps[..deg].iter().sum();
    SpectralResult {
        alpha,
        e_alpha: e,
        ground_vector: s.vectors.column(0).iter().copied().collect(),
        atom_mass_alpha: mass.min(1.0),
        degeneracy: deg,
    }
}

/// `log ⟨ψ, e^{-t H_α} ψ⟩`.
pub fn log_overlap(model: &RankOneModel, alpha: f64, t: f64) -> f64 {
    let s = spectrum(model, alpha);
    let terms: Vec<f64> =
        s.values.iter().zip(&s.overlaps).filter(|(_, &c)| c > 0.0).map(|(&l, &c)| c.ln() - t * l).collect();
    log_sum_exp(&terms)
}

/// `E_{α,t} = -(1/t) log ⟨ψ, e^{-t H_α} ψ⟩`.
pub fn e_alpha_t(model: &RankOneModel, alpha: f64, t: f64) -> f64 {
    assert!(t > 0.0);
    -log_overlap(model, alpha, t) / t
}

/// Finite-difference derivative of `α ↦ ⟨ψ, e^{-tH_α}ψ⟩` at 0 next to the
/// quotient-integral expression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DysonCheck {
    pub t: f64,
    pub order: u8,
    pub lhs: f64,
    pub rhs: f64,
    pub step: f64,
}

impl DysonCheck {
    pub fn rel_err(&self) -> f64 {
        (self.lhs - self.rhs).abs() / self.rhs.abs().max(f64::MIN_POSITIVE)
    }
}

pub fn dyson_identity_check(model: &RankOneModel, t: f64, order: u8) -> Result<DysonCheck> {
    if !(t > 0.0) || !(order == 1 || order == 2) {
        return Err(Error::invalid("Dyson check needs t > 0 and order 1 or 2"));
    }
    let f = |a: f64| log_overlap(model, a, t).exp();
    let h = if order == 1 { 1e-3 } else { 2e-3 } / t.max(1.0);
    let (fm2, fm1, f0, fp1, fp2) = (f(-2.0 * h), f(-h), f(0.0), f(h), f(2.0 * h));
    let lhs = if order == 1 {
        (-fp2 + 8.0 * fp1 - 8.0 * fm1 + fm2) / (12.0 * h)
    } else {
        (-fp2 + 16.0 * fp1 - 30.0 * f0 + 16.0 * fm1 - fm2) / (12.0 * h * h)
    };
    let ev = LaplaceEvaluator::new(model.measure());
    let zt = ev.log_z(t).exp();
    let rhs = if order == 1 { -a1_adaptive(&ev, t) * zt } else { 2.0 * a2_adaptive(&ev, t) * zt };
    Ok(DysonCheck { t, order, lhs, rhs, step: h })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcavityReport {
    pub t: f64,
    pub alphas: Vec<f64>,
    pub values: Vec<f64>,
    pub second_differences: Vec<f64>,
    pub max_second_difference: f64,
    pub tolerance: f64,
    pub concave: bool,
}

/// Second differences of `α ↦ E_{α,t}` on the grid (divided-difference form
/// scaled to the local spacing, so uniform grids give the plain stencil).
pub fn concavity_check(model: &RankOneModel, t: f64, alphas: &[f64]) -> Result<ConcavityReport> {
    if alphas.len() < 5 || alphas.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::invalid("concavity check needs at least 5 increasing alpha values"));
    }
    let values: Vec<f64> = alphas.iter().map(|&a| e_alpha_t(model, a, t)).collect();
    let mut d2 = Vec::with_capacity(alphas.len() - 2);
    for i in 1..alphas.len() - 1 {
        let (a0, a1, a2) = (alphas[i - 1], alphas[i], alphas[i + 1]);
        let s1 = (values[i] - values[i - 1]) / (a1 - a0);
        let s2 = (values[i + 1] - values[i]) / (a2 - a1);
        d2.push((s2 - s1) * 0.5 * (a2 - a0));
    }
    let scale = values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let tolerance = 1e-9 * scale;
    let max_second_difference = d2.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(ConcavityReport {
        t,
        alphas: alphas.to_vec(),
        values,
        concave: max_second_difference <= tolerance,
        second_differences: d2,
        max_second_difference,
        tolerance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeynmanHellmann {
    pub alpha: f64,
    pub h: f64,
    /// `(E_{α+h} - E_α) / h`
    pub right: f64,
    /// `(E_α - E_{α-h}) / h`
    pub left: f64,
    /// Richardson-refined one-sided quotients.
    pub right_refined: f64,
    pub left_refined: f64,
    pub atom_mass: f64,
    pub holds: bool,
}

/// One-sided difference quotients of `E_α` around the ψ ground-space weight.
pub fn feynman_hellmann_check(model: &RankOneModel, alpha: f64, h: f64) -> Result<FeynmanHellmann> {
    if alpha > 0.0 || !(h > 0.0) {
        return Err(Error::invalid("Feynman-Hellmann check needs alpha <= 0 and h > 0"));
    }
    let e = |a: f64| spectral(model, a).e_alpha;
    let e0 = e(alpha);
    let (ep, em) = (e(alpha + h), e(alpha - h));
    let (ep2, em2) = (e(alpha + 0.5 * h), e(alpha - 0.5 * h));
    let right = (ep - e0) / h;
    let left = (e0 - em) / h;
    let right_refined = 2.0 * (ep2 - e0) / (0.5 * h) - right;
    let left_refined = 2.0 * (e0 - em2) / (0.5 * h) - left;
    let mass = spectral(model, alpha).atom_mass_alpha;
    let tol = 1e-10 * (1.0 + e0.abs()) / h;
    Ok(FeynmanHellmann {
        alpha,
        h,
        right,
        left,
        right_refined,
        left_refined,
        atom_mass: mass,
        holds: right <= mass + tol && mass <= left + tol,
    })
}

/// `α ↦ μ_α({E_α})` along the grid and the largest increase.
pub fn atom_mass_profile(model: &RankOneModel, alphas: &[f64]) -> (Vec<f64>, f64) {
    let m: Vec<f64> = alphas.iter().map(|&a| spectral(model, a).atom_mass_alpha).collect();
    let inc = m.windows(2).map(|p| p[1] - p[0]).fold(f64::NEG_INFINITY, f64::max);
    (m, inc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::fixtures::*;
    use crate::measure::{Density, ProbabilityMeasure};
    use approx::assert_relative_eq;

    fn two_point() -> RankOneModel {
        RankOneModel::new(vec![0.0, 1.0], vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn two_atom_discretizes_exactly() {
        let m = discretize(&two_atom(0.5, 1.0), 2, 10.0, 1e-6).unwrap();
        assert_eq!(m, two_point());
    }

    #[test]
    fn uniform_discretization() {
        let u = ProbabilityMeasure::new(vec![], vec![Density { kind: uniform(1.0, 2.0), weight: 1.0 }]).unwrap();
        let m = discretize(&u, 32, 10.0, 1e-6).unwrap();
        let z1: f64 = m.x.iter().zip(&m.w).map(|(x, w)| w * (-x).exp()).sum();
        assert_relative_eq!(z1, (-1f64).exp() - (-2f64).exp(), epsilon = 1e-10);
    }

    #[test]
    fn mixture_discretization_matches_transform() {
        let mu = atom_plus_uniform(0.5, 1.0, 2.0);
        let m = discretize(&mu, 33, 100.0, 1e-6).unwrap();
        let a = LaplaceEvaluator::new(mu);
        let b = LaplaceEvaluator::new(m.measure());
        for t in [1.0, 10.0, 100.0] {
            assert!((a.log_z(t) - b.log_z(t)).abs() < 1e-6);
        }
    }

    #[test]
    fn discretization_gate_rejects_coarse_grids() {
        let mu = exponential(1.0);
        assert!(discretize(&mu, 2, 200.0, 1e-6).is_err());
    }

    #[test]
    fn spectral_examples() {
        let m = two_point();
        let s = spectral(&m, 0.0);
        assert_relative_eq!(s.e_alpha, 0.0, epsilon = 1e-15);
        assert_relative_eq!(s.atom_mass_alpha, 0.5, epsilon = 1e-14);
        assert_relative_eq!(spectral(&m, -1.0).e_alpha, -0.5f64.sqrt(), epsilon = 1e-14);
        let es: Vec<f64> = [-2.0, 0.0, 2.0, 10.0].iter().map(|&a| spectral(&m, a).e_alpha).collect();
        assert!(es.windows(2).all(|p| p[1] >= p[0]));
    }

    #[test]
    fn e_alpha_t_examples() {
        let one = RankOneModel::new(vec![0.0], vec![1.0]).unwrap();
        assert_relative_eq!(e_alpha_t(&one, 0.7, 3.0), 0.7, epsilon = 1e-14);
        let m = two_point();
        // E_{α,t} = E_α - ln(ρ_α)/t up to exponentially small terms
        let s = spectral(&m, -1.0);
        let want = s.e_alpha - s.atom_mass_alpha.ln() / 50.0;
        assert!((e_alpha_t(&m, -1.0, 50.0) - want).abs() < 1e-12);
        assert!((e_alpha_t(&m, -1.0, 1e7) - s.e_alpha).abs() < 1e-6);
        let ev = LaplaceEvaluator::new(m.measure());
        assert_relative_eq!(e_alpha_t(&m, 0.0, 4.0), ev.infsupp_estimate(4.0), epsilon = 1e-14);
    }

    #[test]
    fn dyson_trivial_and_two_point() {
        let one = RankOneModel::new(vec![0.0], vec![1.0]).unwrap();
        let d1 = dyson_identity_check(&one, 3.0, 1).unwrap();
        assert_relative_eq!(d1.rhs, -3.0, epsilon = 1e-10);
        assert!(d1.rel_err() < 1e-8);
        let d2 = dyson_identity_check(&one, 3.0, 2).unwrap();
        assert_relative_eq!(d2.rhs, 9.0, max_relative = 1e-10);
        assert!(d2.rel_err() < 1e-6);
        for order in [1, 2] {
            let d = dyson_identity_check(&two_point(), 5.0, order).unwrap();
            assert!(d.rel_err() < 1e-6, "{d:?}");
        }
    }

    #[test]
    fn concavity_and_fh() {
        let alphas: Vec<f64> = (0..=40).map(|i| -2.0 + 0.1 * i as f64).collect();
        let one = RankOneModel::new(vec![0.0], vec![1.0]).unwrap();
        let r = concavity_check(&one, 2.0, &alphas).unwrap();
        assert!(r.max_second_difference.abs() < 1e-12);
        for t in [1.0, 10.0] {
            assert!(concavity_check(&two_point(), t, &alphas).unwrap().concave);
        }
        let fh = feynman_hellmann_check(&two_point(), -0.5, 1e-4).unwrap();
        assert!(fh.holds, "{fh:?}");
        let fh = feynman_hellmann_check(&one, -0.3, 1e-4).unwrap();
        assert_relative_eq!(fh.atom_mass, 1.0, epsilon = 1e-12);
        assert_relative_eq!(fh.right, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn average_derivative_tends_to_atom_mass() {
        let m = RankOneModel::random(8, 11);
        let ev = LaplaceEvaluator::new(m.measure());
        let avg = crate::wiener::atom_average_estimate(&ev, 4000.0);
        let mass = spectral(&m, 0.0).atom_mass_alpha;
        assert!((avg - mass).abs() < 5e-3, "{avg} vs {mass}");
    }

    #[test]
    fn json_round_trip() {
        let m = RankOneModel::random(8, 3);
        assert_eq!(RankOneModel::from_json(&m.to_json()).unwrap(), m);
    }
}
