//! Small statistical helpers shared by the Monte Carlo code.

use serde::{Deserialize, Serialize};

/// `log Σ exp(x_i)` without overflow; `-inf` for an empty or all `-inf` slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Mean with standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
    pub n: u64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate { value, se: 0.0, n: 0 }
    }

    /// |value - target| in units of standard error (inf when se is zero and they differ).
    pub fn z_score(&self, target: f64) -> f64 {
        let d = (self.value - target).abs();
        if d == 0.0 {
            0.0
        } else if self.se > 0.0 {
            d / self.se
        } else {
            f64::INFINITY
        }
    }

    pub fn within(&self, target: f64, k: f64) -> bool {
        self.z_score(target) <= k
    }
}

/// Streaming mean and variance (Welford). Merging is exact up to rounding
/// but the Monte Carlo drivers always fold in a fixed order anyway.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, o: &Welford) {
        if o.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *o;
            return;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        self.mean += d * o.n as f64 / n as f64;
        self.m2 += o.m2 + d * d * (self.n as f64) * (o.n as f64) / n as f64;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn estimate(&self) -> Estimate {
        let se = if self.n < 2 { 0.0 } else { (self.variance() / self.n as f64).sqrt() };
        Estimate { value: self.mean, se, n: self.n }
    }
}

/// Sample covariance of paired values.
pub fn covariance(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / (n - 1) as f64
}

/// `log(mean(exp(l_i)))` with a delete-one jackknife standard error.
pub fn log_mean_exp(logw: &[f64]) -> Estimate {
    let n = logw.len();
    assert!(n > 0, "log_mean_exp of an empty sample");
    let m = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = w.iter().sum();
    let value = m + (s / n as f64).ln();
    if n < 2 {
        return Estimate { value, se: 0.0, n: 1 };
    }
    let loo: Vec<f64> = w.iter().map(|wi| ((s - wi) / (n - 1) as f64).ln()).collect();
    let mean_loo = loo.iter().sum::<f64>() / n as f64;
    let var = loo.iter().map(|x| (x - mean_loo).powi(2)).sum::<f64>() * (n - 1) as f64 / n as f64;
    Estimate { value, se: var.sqrt(), n: n as u64 }
}

/// Self-normalized importance mean `Σ w x / Σ w` with `w = exp(logw)` and
/// its delta-method standard error.
pub fn self_normalized_mean(logw: &[f64], xs: &[f64]) -> Estimate {
    assert_eq!(logw.len(), xs.len());
    let m = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - m).exp()).collect();
    let sw: f64 = w.iter().sum();
    let mean = w.iter().zip(xs).map(|(w, x)| w * x).sum::<f64>() / sw;
    let var = w.iter().zip(xs).map(|(w, x)| (w * (x - mean)).powi(2)).sum::<f64>() / (sw * sw);
    Estimate { value: mean, se: var.sqrt(), n: xs.len() as u64 }
}

/// Effective sample size `(Σw)^2 / Σw^2` of log-weights.
pub fn effective_sample_size(logw: &[f64]) -> f64 {
    let m = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (s, s2) = logw.iter().fold((0.0, 0.0), |(s, s2), l| {
        let w = (l - m).exp();
        (s + w, s2 + w * w)
    });
    if s2 == 0.0 {
        0.0
    } else {
        s * s / s2
    }
}

/// Result of a one-sample Kolmogorov–Smirnov test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// One-sample KS test against a continuous CDF, asymptotic p-value with the
/// Stephens small-sample correction.
pub fn ks_test<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> KsResult {
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    let nf = n as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / nf).max((i + 1) as f64 / nf - f);
    }
    let sq = nf.sqrt();
    let lambda = (sq + 0.12 + 0.11 / sq) * d;
    KsResult { statistic: d, p_value: kolmogorov_q(lambda), n }
}

// Q_KS(λ) = 2 Σ (-1)^{k-1} exp(-2 k² λ²)
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = sign * (-2.0 * kf * kf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 * sum.abs().max(1e-300) {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}
