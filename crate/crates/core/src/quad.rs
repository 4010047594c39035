//! Gauss–Legendre rules and adaptive integration on finite intervals.

use std::cell::Cell;
use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

/// An n-point Gauss–Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Builds the rule by Newton iteration on P_n from Chebyshev-like guesses.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_pair(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() <= 1e-16 * x.abs().max(1.0) {
                    break;
                }
            }
            let (_, d) = legendre_pair(n, x);
            dp = if d != 0.0 { d } else { dp };
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        GaussLegendre { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Nodes and weights mapped onto [a, b].
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let h = 0.5 * (b - a);
        let c = 0.5 * (b + a);
        self.nodes.iter().zip(&self.weights).map(move |(&x, &w)| (c + h * x, h * w))
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, a: f64, b: f64, f: F) -> f64 {
        let mut s = 0.0;
        for (x, w) in self.mapped(a, b) {
            s += w * f(x);
        }
        s
    }
}

// P_n(x) and P_n'(x) by the three-term recurrence.
fn legendre_pair(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Shared, lazily built rule of the given size.
pub fn rule(n: usize) -> &'static GaussLegendre {
    static CACHE: OnceLock<Mutex<HashMap<usize, &'static GaussLegendre>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("rule cache poisoned");
    guard.entry(n).or_insert_with(|| Box::leak(Box::new(GaussLegendre::new(n))))
}

/// Adaptive bisection driven by a fixed Gauss–Legendre rule.
///
/// A panel is accepted when the rule on the panel and the sum of the rule on
/// both halves agree within `max(abs, rel * |value|)`. `max_panels` bounds
/// the total work per call.
#[derive(Debug, Clone, Copy)]
pub struct Adaptive {
    pub order: usize,
    pub rel: f64,
    pub abs: f64,
    pub max_depth: u32,
    pub max_panels: usize,
}

impl Default for Adaptive {
    fn default() -> Self {
        Adaptive { order: 32, rel: 1e-12, abs: 1e-280, max_depth: 48, max_panels: 20_000 }
    }
}

impl Adaptive {
    pub fn with_rel(mut self, rel: f64) -> Self {
        self.rel = rel;
        self
    }

    pub fn with_abs(mut self, abs: f64) -> Self {
        self.abs = abs;
        self
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: &F, a: f64, b: f64) -> f64 {
        if !(b > a) {
            return 0.0;
        }
        let r = rule(self.order);
        let whole = r.integrate(a, b, f);
        let budget = Cell::new(self.max_panels);
        self.refine(r, f, a, b, whole, self.max_depth, &budget)
    }

    #[allow(clippy::too_many_arguments)]
    fn refine<F: Fn(f64) -> f64>(
        &self,
        r: &GaussLegendre,
        f: &F,
        a: f64,
        b: f64,
        whole: f64,
        depth: u32,
        budget: &Cell<usize>,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let left = r.integrate(a, m, f);
        let right = r.integrate(m, b, f);
        let both = left + right;
        let tol = self.abs.max(self.rel * both.abs());
        let left_budget = budget.get();
        if (both - whole).abs() <= tol || depth == 0 || m <= a || m >= b || left_budget < 2 {
            return both;
        }
        budget.set(left_budget - 2);
        self.refine(r, f, a, m, left, depth - 1, budget) + self.refine(r, f, m, b, right, depth - 1, budget)
    }

    /// Integrates over [a, b] after splitting at geometric panels that grow by
    /// a factor two away from each anchor, starting from width `h0`.
    ///
    /// Use this when the integrand has a feature of known scale near known
    /// points; plain bisection can step over a narrow spike entirely.
    pub fn integrate_graded<F: Fn(f64) -> f64>(&self, f: &F, a: f64, b: f64, anchors: &[f64], h0: f64) -> f64 {
        let breaks = graded_breaks(a, b, anchors, h0);
        let mut acc = Compensated::default();
        for w in breaks.windows(2) {
            acc.add(self.integrate(f, w[0], w[1]));
        }
        acc.sum()
    }
}

/// Breakpoints in [a, b] refined geometrically around each anchor.
pub fn graded_breaks(a: f64, b: f64, anchors: &[f64], h0: f64) -> Vec<f64> {
    let mut pts = vec![a, b];
    if b > a && h0 > 0.0 && h0.is_finite() {
        for &c in anchors {
            if !(c >= a && c <= b) {
                continue;
            }
            pts.push(c);
            let mut h = h0;
            while c + h < b {
                pts.push(c + h);
                h *= 2.0;
            }
            let mut h = h0;
            while c - h > a {
                pts.push(c - h);
                h *= 2.0;
            }
        }
    }
    pts.sort_by(|x, y| x.total_cmp(y));
    let scale = (b - a).abs().max(a.abs()).max(b.abs()).max(1e-300);
    pts.dedup_by(|x, y| (*x - *y).abs() <= 1e-15 * scale);
    pts
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct Compensated {
    sum: f64,
    comp: f64,
}

impl Compensated {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn sum(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for Compensated {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut c = Compensated::default();
        for x in iter {
            c.add(x);
        }
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn weights_sum_to_two() {
        for n in [1, 2, 5, 16, 32, 64, 101] {
            let r = GaussLegendre::new(n);
            let s: f64 = r.weights().iter().sum();
            assert_relative_eq!(s, 2.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn small_rules_match_tables() {
        let r = GaussLegendre::new(2);
        assert_relative_eq!(r.nodes()[1], 1.0 / 3f64.sqrt(), epsilon = 1e-15);
        let r = GaussLegendre::new(3);
        assert_relative_eq!(r.nodes()[2], (0.6f64).sqrt(), epsilon = 1e-15);
        assert_relative_eq!(r.weights()[1], 8.0 / 9.0, epsilon = 1e-15);
    }

    #[test]
    fn exact_for_degree_2n_minus_1() {
        let r = GaussLegendre::new(8);
        let v = r.integrate(0.0, 2.0, |x| x.powi(15));
        assert_relative_eq!(v, 2f64.powi(16) / 16.0, max_relative = 1e-13);
    }

    #[test]
    fn adaptive_handles_endpoint_singularity() {
        let q = Adaptive::default().with_rel(1e-10);
        let v = q.integrate(&|x: f64| 1.0 / x.sqrt(), 0.0, 1.0);
        assert_relative_eq!(v, 2.0, max_relative = 1e-8);
    }

    #[test]
    fn graded_finds_narrow_spike() {
        let q = Adaptive::default();
        let f = |x: f64| (-1e4 * x).exp();
        let v = q.integrate_graded(&f, 0.0, 50.0, &[0.0], 1e-4);
        assert_relative_eq!(v, 1e-4, max_relative = 1e-11);
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let c: Compensated = [1.0, 1e-16, 1e-16, -1.0].into_iter().collect();
        assert_relative_eq!(c.sum(), 2e-16, max_relative = 1e-12);
    }
}
