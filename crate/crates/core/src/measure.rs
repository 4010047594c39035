//! Probability measures on the real line with support bounded below.
//!
//! A measure is a finite list of atoms plus density pieces drawn from three
//! families whose edge behaviour is known in closed form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::{self, Adaptive};

const MASS_TOL: f64 = 1e-12;
// Beyond this many e-folds the tilt factor is below f64 resolution.
const EXP_CUTOFF: f64 = 690.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub location: f64,
    pub mass: f64,
}

/// Shape of a density piece. Shapes are normalized internally; the piece's
/// total mass is carried by [`Density::weight`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DensityKind {
    /// Proportional to `sum_k coeffs[k] * (x - a)^k` on [a, b].
    Polynomial { a: f64, b: f64, coeffs: Vec<f64> },
    /// Proportional to `exp(-rate * (x - a))` on [a, inf).
    ExpTail { a: f64, rate: f64 },
    /// Proportional to `(x - a)^p` on [a, b], p > -1.
    PowerEdge { a: f64, b: f64, p: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Density {
    #[serde(flatten)]
    pub kind: DensityKind,
    pub weight: f64,
}

/// Value of `∫ μ(dx) / (x - E)` over `(E, inf)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "value", rename_all = "kebab-case")]
pub enum InverseMoment {
    Finite(f64),
    Infinite,
}

impl InverseMoment {
    pub fn value(&self) -> f64 {
        match *self {
            InverseMoment::Finite(v) => v,
            InverseMoment::Infinite => f64::INFINITY,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, InverseMoment::Finite(_))
    }
}

impl DensityKind {
    pub fn inf(&self) -> f64 {
        match *self {
            DensityKind::Polynomial { a, .. } | DensityKind::ExpTail { a, .. } | DensityKind::PowerEdge { a, .. } => a,
        }
    }

    pub fn sup(&self) -> f64 {
        match *self {
            DensityKind::Polynomial { b, .. } | DensityKind::PowerEdge { b, .. } => b,
            DensityKind::ExpTail { .. } => f64::INFINITY,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            DensityKind::Polynomial { a, b, coeffs } => {
                if !(a.is_finite() && b.is_finite() && b > a) {
                    return Err(Error::invalid(format!("polynomial piece needs a < b, got [{a}, {b}]")));
                }
                if coeffs.is_empty() || coeffs.iter().any(|c| !c.is_finite()) {
                    return Err(Error::invalid("polynomial piece needs finite coefficients"));
                }
                let l = b - a;
                let n = 4 * coeffs.len() + 64;
                for i in 0..=n {
                    let y = l * i as f64 / n as f64;
                    if poly_eval(coeffs, y) < -1e-12 * poly_scale(coeffs, l) {
                        return Err(Error::invalid(format!("polynomial density negative at x = {}", a + y)));
                    }
                }
                if poly_norm(coeffs, l) <= 0.0 {
                    return Err(Error::invalid("polynomial density has zero mass"));
                }
            }
            DensityKind::ExpTail { a, rate } => {
                if !(a.is_finite() && rate.is_finite() && *rate > 0.0) {
                    return Err(Error::invalid(format!("exponential tail needs rate > 0, got {rate}")));
                }
            }
            DensityKind::PowerEdge { a, b, p } => {
                if !(a.is_finite() && b.is_finite() && b > a) {
                    return Err(Error::invalid(format!("power-edge piece needs a < b, got [{a}, {b}]")));
                }
                if !(p.is_finite() && *p > -1.0) {
                    return Err(Error::invalid(format!("power-edge exponent must exceed -1, got {p}")));
                }
            }
        }
        Ok(())
    }

    /// Normalized density at x.
    pub fn pdf(&self, x: f64) -> f64 {
        if x < self.inf() || x > self.sup() {
            return 0.0;
        }
        match self {
            DensityKind::Polynomial { a, b, coeffs } => poly_eval(coeffs, x - a) / poly_norm(coeffs, b - a),
            DensityKind::ExpTail { a, rate } => rate * (-rate * (x - a)).exp(),
            DensityKind::PowerEdge { a, b, p } => {
                let l = b - a;
                (p + 1.0) * (x - a).powf(*p) / l.powf(p + 1.0)
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            DensityKind::Polynomial { a, b, coeffs } => {
                let l = b - a;
                a + poly_moment(coeffs, l, 1) / poly_norm(coeffs, l)
            }
            DensityKind::ExpTail { a, rate } => a + 1.0 / rate,
            DensityKind::PowerEdge { a, b, p } => a + (b - a) * (p + 1.0) / (p + 2.0),
        }
    }

    /// Variance of the normalized piece.
    pub fn variance(&self) -> f64 {
        match self {
            DensityKind::Polynomial { a, b, coeffs } => {
                let l = b - a;
                let z = poly_norm(coeffs, l);
                let m1 = poly_moment(coeffs, l, 1) / z;
                let m2 = poly_moment(coeffs, l, 2) / z;
                (m2 - m1 * m1).max(0.0)
            }
            DensityKind::ExpTail { rate, .. } => 1.0 / (rate * rate),
            DensityKind::PowerEdge { a, b, p } => {
                let l = b - a;
                let m1 = (p + 1.0) / (p + 2.0);
                let m2 = (p + 1.0) / (p + 3.0);
                l * l * (m2 - m1 * m1)
            }
        }
    }

    /// `∫ f(x) exp(-t (x - a)) pdf(x) dx` for the normalized piece.
    ///
    /// Panels are graded from the lower edge at the scale set by `t` so that
    /// large tilts are resolved; the integration range is cut where the tilt
    /// factor underflows.
    pub fn integrate_tilted<F: Fn(f64) -> f64>(&self, f: F, t: f64, q: &Adaptive) -> f64 {
        let h = if t > 0.0 { 0.5 / t } else { f64::INFINITY };
        self.integrate_graded(f, t, &[], h, q)
    }

    /// Like [`integrate_tilted`](Self::integrate_tilted) with extra grading
    /// anchors (in x) refined down to width `h`.
    pub fn integrate_graded<F: Fn(f64) -> f64>(&self, f: F, t: f64, anchors: &[f64], h: f64, q: &Adaptive) -> f64 {
        assert!(t >= 0.0);
        match self {
            DensityKind::Polynomial { a, b, coeffs } => {
                let l = b - a;
                let z = poly_norm(coeffs, l);
                let top = if t > 0.0 { l.min(EXP_CUTOFF / t) } else { l };
                let h0 = h.min(top);
                let mut an = vec![0.0];
                an.extend(anchors.iter().map(|x| x - a));
                let g = |y: f64| f(a + y) * (-t * y).exp() * poly_eval(coeffs, y) / z;
                q.integrate_graded(&g, 0.0, top, &an, h0)
            }
            DensityKind::ExpTail { a, rate } => {
                let r = rate + t;
                let top = EXP_CUTOFF / r;
                let h0 = h.min(0.5 / r);
                let mut an = vec![0.0];
                an.extend(anchors.iter().map(|x| x - a));
                let g = |y: f64| f(a + y) * rate * (-r * y).exp();
                q.integrate_graded(&g, 0.0, top, &an, h0)
            }
            DensityKind::PowerEdge { a, b, p } => {
                let l = b - a;
                let k = edge_power(*p) as i32;
                let kf = k as f64;
                let e = kf * (p + 1.0) - 1.0;
                let c = kf * (p + 1.0);
                let top = if t > 0.0 { (EXP_CUTOFF / (t * l)).powf(1.0 / kf).min(1.0) } else { 1.0 };
                let h0 = if h.is_finite() { (h / l).powf(1.0 / kf).min(h / (l * kf)).min(top) } else { top };
                let mut an = vec![0.0];
                an.extend(anchors.iter().filter(|&&x| x > *a).map(|x| ((x - a) / l).powf(1.0 / kf)));
                let g = |s: f64| {
                    let y = l * s.powi(k);
                    f(a + y) * (-t * y).exp() * c * s.powf(e)
                };
                q.integrate_graded(&g, 0.0, top, &an, h0)
            }
        }
    }

    /// Quadrature nodes and weights (summing to one) representing the piece.
    pub fn nodes(&self, n: usize) -> Vec<(f64, f64)> {
        let r = quad::rule(n.max(1));
        match self {
            DensityKind::Polynomial { a, b, .. } => {
                let mut out: Vec<(f64, f64)> = r.mapped(*a, *b).map(|(x, w)| (x, w * self.pdf(x))).collect();
                renormalize(&mut out);
                out
            }
            DensityKind::ExpTail { a, rate } => r.mapped(0.0, 1.0).map(|(u, w)| (a - (-u).ln_1p() / rate, w)).collect(),
            DensityKind::PowerEdge { a, b, p } => {
                let l = b - a;
                let k = edge_power(*p) as i32;
                let kf = k as f64;
                let e = kf * (p + 1.0) - 1.0;
                let c = kf * (p + 1.0);
                let mut out: Vec<(f64, f64)> =
                    r.mapped(0.0, 1.0).map(|(s, w)| (a + l * s.powi(k), w * c * s.powf(e))).collect();
                renormalize(&mut out);
                out
            }
        }
    }

    pub fn translate(&self, c: f64) -> DensityKind {
        match self.clone() {
            DensityKind::Polynomial { a, b, coeffs } => DensityKind::Polynomial { a: a + c, b: b + c, coeffs },
            DensityKind::ExpTail { a, rate } => DensityKind::ExpTail { a: a + c, rate },
            DensityKind::PowerEdge { a, b, p } => DensityKind::PowerEdge { a: a + c, b: b + c, p },
        }
    }
}

fn renormalize(v: &mut [(f64, f64)]) {
    let s: f64 = v.iter().map(|p| p.1).sum();
    for p in v.iter_mut() {
        p.1 /= s;
    }
}

// Smallest k <= 8 making k(p+1) an integer, so that x - a = L s^k turns the
// edge singularity into a polynomial weight in s.
fn edge_power(p: f64) -> u32 {
    for k in 1..=8u32 {
        let v = k as f64 * (p + 1.0);
        if (v - v.round()).abs() < 1e-12 && v.round() >= 1.0 {
            return k;
        }
    }
    2
}

fn poly_eval(c: &[f64], y: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &ck| acc * y + ck)
}

fn poly_scale(c: &[f64], l: f64) -> f64 {
    c.iter().enumerate().map(|(k, ck)| ck.abs() * l.powi(k as i32)).sum::<f64>().max(f64::MIN_POSITIVE)
}

// ∫_0^L y^j p(y) dy
fn poly_moment(c: &[f64], l: f64, j: i32) -> f64 {
    c.iter()
        .enumerate()
        .map(|(k, ck)| {
            let e = k as i32 + j + 1;
            ck * l.powi(e) / e as f64
        })
        .sum()
}

fn poly_norm(c: &[f64], l: f64) -> f64 {
    poly_moment(c, l, 0)
}

/// A probability measure: atoms plus density pieces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityMeasure {
    #[serde(default, rename = "atom")]
    pub atoms: Vec<Atom>,
    #[serde(default, rename = "density")]
    pub densities: Vec<Density>,
}

impl ProbabilityMeasure {
    pub fn new(atoms: Vec<Atom>, densities: Vec<Density>) -> Result<Self> {
        let m = ProbabilityMeasure { atoms, densities };
        m.validate()?;
        Ok(m)
    }

    pub fn dirac(x: f64) -> Self {
        ProbabilityMeasure { atoms: vec![Atom { location: x, mass: 1.0 }], densities: vec![] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.atoms.is_empty() && self.densities.is_empty() {
            return Err(Error::invalid("measure has no components"));
        }
        for a in &self.atoms {
            if !(a.location.is_finite() && a.mass > 0.0 && a.mass <= 1.0 + MASS_TOL) {
                return Err(Error::invalid(format!("atom at {} has mass {} outside (0, 1]", a.location, a.mass)));
            }
        }
        for (i, a) in self.atoms.iter().enumerate() {
            if self.atoms[..i].iter().any(|b| b.location == a.location) {
                return Err(Error::invalid(format!("duplicate atom location {}", a.location)));
            }
        }
        for d in &self.densities {
            if !(d.weight > 0.0 && d.weight <= 1.0 + MASS_TOL) {
                return Err(Error::invalid(format!("density weight {} outside (0, 1]", d.weight)));
            }
            d.kind.validate()?;
        }
        let total = self.total_mass();
        if (total - 1.0).abs() > MASS_TOL {
            return Err(Error::invalid(format!("total mass {total} differs from 1")));
        }
        Ok(())
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).sum::<f64>() + self.densities.iter().map(|d| d.weight).sum::<f64>()
    }

    /// Infimum of the support; exact.
    pub fn infimum_support(&self) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.location)
            .chain(self.densities.iter().map(|d| d.kind.inf()))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn supremum_support(&self) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.location)
            .chain(self.densities.iter().map(|d| d.kind.sup()))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass * a.location).sum::<f64>()
            + self.densities.iter().map(|d| d.weight * d.kind.mean()).sum::<f64>()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let atoms: f64 = self.atoms.iter().map(|a| a.mass * (a.location - m).powi(2)).sum();
        let dens: f64 =
            self.densities.iter().map(|d| d.weight * (d.kind.variance() + (d.kind.mean() - m).powi(2))).sum();
        atoms + dens
    }

    /// Mass of the atom sitting at the support infimum, zero if none.
    pub fn atom_at_infimum(&self) -> f64 {
        let e = self.infimum_support();
        self.atoms.iter().filter(|a| a.location == e).map(|a| a.mass).sum()
    }

    /// `∫ f dμ` by exact atom sums and per-piece adaptive quadrature.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F, q: &Adaptive) -> f64 {
        let atoms: f64 = self.atoms.iter().map(|a| a.mass * f(a.location)).sum();
        let dens: f64 = self.densities.iter().map(|d| d.weight * d.kind.integrate_tilted(&f, 0.0, q)).sum();
        atoms + dens
    }

    /// `∫_{(E, inf)} μ(dx) / (x - E)`, with divergence decided from the kind
    /// of the density piece touching E.
    pub fn inverse_moment_oracle(&self) -> Result<InverseMoment> {
        let e = self.infimum_support();
        let q = Adaptive::default().with_abs(1e-14);
        let mut total = 0.0;
        for a in &self.atoms {
            if a.location > e {
                total += a.mass / (a.location - e);
            }
        }
        for d in &self.densities {
            let lo = d.kind.inf();
            if lo > e {
                total += d.weight * d.kind.integrate_tilted(|x| 1.0 / (x - e), 0.0, &q);
                continue;
            }
            match &d.kind {
                DensityKind::ExpTail { .. } => return Ok(InverseMoment::Infinite),
                DensityKind::PowerEdge { a, b, p } => {
                    if *p <= 0.0 {
                        return Ok(InverseMoment::Infinite);
                    }
                    // p (x-a)^(p-1) integrates in closed form
                    let l = b - a;
                    total += d.weight * (p + 1.0) / (p * l);
                }
                DensityKind::Polynomial { a, b, coeffs } => {
                    let l = b - a;
                    let scale = poly_scale(coeffs, l);
                    if coeffs[0] > 1e-14 * scale {
                        return Ok(InverseMoment::Infinite);
                    }
                    if coeffs[0] != 0.0 {
                        return Err(Error::invalid(format!(
                            "polynomial piece at E has edge value {:e}; too small to classify",
                            coeffs[0]
                        )));
                    }
                    let z = poly_norm(coeffs, l);
                    let v: f64 =
                        coeffs.iter().enumerate().skip(1).map(|(k, ck)| ck * l.powi(k as i32) / k as f64).sum();
                    total += d.weight * v / z;
                }
            }
        }
        Ok(InverseMoment::Finite(total))
    }

    /// Shifts every location by c.
    pub fn translate(&self, c: f64) -> Self {
        ProbabilityMeasure {
            atoms: self.atoms.iter().map(|a| Atom { location: a.location + c, mass: a.mass }).collect(),
            densities: self.densities.iter().map(|d| Density { kind: d.kind.translate(c), weight: d.weight }).collect(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let m: ProbabilityMeasure = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("measure serializes to toml")
    }
}

/// Fixture measures used across tests, benches and the CLI.
pub mod fixtures {
    use super::*;

    /// `rho δ_0 + (1 - rho) δ_delta`.
    pub fn two_atom(rho: f64, delta: f64) -> ProbabilityMeasure {
        ProbabilityMeasure::new(
            vec![Atom { location: 0.0, mass: rho }, Atom { location: delta, mass: 1.0 - rho }],
            vec![],
        )
        .expect("valid two-atom measure")
    }

    pub fn exponential(rate: f64) -> ProbabilityMeasure {
        ProbabilityMeasure::new(vec![], vec![Density { kind: DensityKind::ExpTail { a: 0.0, rate }, weight: 1.0 }])
            .expect("valid exponential measure")
    }

    pub fn uniform(a: f64, b: f64) -> DensityKind {
        DensityKind::Polynomial { a, b, coeffs: vec![1.0] }
    }

    /// `rho δ_0 + (1 - rho) Unif[a, b]`.
    pub fn atom_plus_uniform(rho: f64, a: f64, b: f64) -> ProbabilityMeasure {
        ProbabilityMeasure::new(
            vec![Atom { location: 0.0, mass: rho }],
            vec![Density { kind: uniform(a, b), weight: 1.0 - rho }],
        )
        .expect("valid mixture")
    }

    /// Normalized `(x)^p` on [0, 1].
    pub fn power_edge(p: f64) -> ProbabilityMeasure {
        ProbabilityMeasure::new(
            vec![],
            vec![Density { kind: DensityKind::PowerEdge { a: 0.0, b: 1.0, p }, weight: 1.0 }],
        )
        .expect("valid power-edge measure")
    }

    /// `rho δ_0 + (1 - rho)` times the normalized power edge on [0, 1].
    pub fn atom_plus_power_edge(rho: f64, p: f64) -> ProbabilityMeasure {
        ProbabilityMeasure::new(
            vec![Atom { location: 0.0, mass: rho }],
            vec![Density { kind: DensityKind::PowerEdge { a: 0.0, b: 1.0, p }, weight: 1.0 - rho }],
        )
        .expect("valid mixture")
    }
}
