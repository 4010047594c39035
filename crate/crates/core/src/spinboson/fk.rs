use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use super::model::{build_generator, GSBModel, Generator};
use crate::error::{Error, Result};
use crate::rng::{par_map_paths, path_rng};
use crate::stats::{effective_sample_size, log_mean_exp, Estimate};

/// `(ψ₀, ψ₁, ψ₂)` with `ψ_n(x) = ∫₀¹ uⁿ e^{-xu} du`, `x ≥ 0`.
pub fn psi_moments(x: f64) -> (f64, f64, f64) {
    if x < 1.0 {
        let (mut p0, mut p1, mut p2) = (0.0, 0.0, 0.0);
        let mut term = 1.0;
        for m in 0..30 {
            let mf = m as f64;
            p0 += term / (mf + 1.0);
            p1 += term / (mf + 2.0);
            p2 += term / (mf + 3.0);
            term *= -x / (mf + 1.0);
        }
        (p0, p1, p2)
    } else {
        let e = (-x).exp();
        let p0 = -(-x).exp_m1() / x;
        let p1 = (p0 - e) / x;
        let p2 = (2.0 * p1 - e) / x;
        (p0, p1, p2)
    }
}

/// Piecewise-constant path on `[0, T]`: start state and `(time, new state)`
/// for every jump.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpPath {
    pub t_end: f64,
    pub start: usize,
    pub jumps: Vec<(f64, usize)>,
}

impl JumpPath {
    /// `(start time, length, state)` of each constancy interval.
    pub fn segments(&self) -> impl Iterator<Item = (f64, f64, usize)> + '_ {
        let n = self.jumps.len();
        (0..=n).map(move |j| {
            let (a, s) = if j == 0 { (0.0, self.start) } else { self.jumps[j - 1] };
            let b = if j < n { self.jumps[j].0 } else { self.t_end };
            (a, b - a, s)
        })
    }

    /// State at time `t` (right-continuous).
    pub fn state_at(&self, t: f64) -> usize {
        let k = self.jumps.partition_point(|&(tj, _)| tj <= t);
        if k == 0 {
            self.start
        } else {
            self.jumps[k - 1].1
        }
    }

    /// Number of jumps in `(s, t]`.
    pub fn jumps_between(&self, s: f64, t: f64) -> usize {
        let (s, t) = if s <= t { (s, t) } else { (t, s) };
        self.jumps.partition_point(|&(tj, _)| tj <= t) - self.jumps.partition_point(|&(tj, _)| tj <= s)
    }
}

/// Holding time in state `i`; infinite for absorbing states.
pub fn sample_holding(gen: &Generator, i: usize, rng: &mut ChaCha8Rng) -> f64 {
    let rate = gen.rate(i);
    if rate > 0.0 {
        let e: f64 = Exp1.sample(rng);
        e / rate
    } else {
        f64::INFINITY
    }
}

/// Samples a path of the jump process from the uniform start law.
pub fn sample_path(gen: &Generator, t_end: f64, rng: &mut ChaCha8Rng) -> JumpPath {
    let d = gen.dim();
    let start = rng.random_range(0..d);
    let mut jumps = Vec::new();
    let mut state = start;
    let mut t = sample_holding(gen, state, rng);
    while t < t_end {
        let rate = gen.rate(state);
        let mut u = rng.random::<f64>() * rate;
        let mut next = state;
        for j in 0..d {
            if j == state {
                continue;
            }
            next = j;
            u -= gen.q[(state, j)];
            if u < 0.0 {
                break;
            }
        }
        state = next;
        jumps.push((t, state));
        t += sample_holding(gen, state, rng);
    }
    JumpPath { t_end, start, jumps }
}

/// Model data consumed by the path functionals.
#[derive(Debug, Clone)]
pub struct FkKernel {
    pub gen: Generator,
    pub omegas: Vec<f64>,
    pub nu2: Vec<f64>,
}

impl FkKernel {
    pub fn new(model: &GSBModel) -> Result<Self> {
        model.validate()?;
        Ok(FkKernel {
            gen: build_generator(model)?,
            omegas: model.field.modes.iter().map(|m| m.omega).collect(),
            nu2: model.field.modes.iter().map(|m| m.nu * m.nu).collect(),
        })
    }
}

/// Exact functionals of one path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathFunctionals {
    /// `½∬ g(t-s) w(X_s) w(X_t) ds dt + ∫ v(X_s) ds`.
    pub log_weight: f64,
    /// `(1/2T) ∬ |t-s| g(t-s) w(X_s) w(X_t) ds dt`.
    pub upper: f64,
    /// `c_k = ∫₀^T e^{-ω_k u} w(X_u) du` per mode.
    pub c: Vec<f64>,
    pub start: usize,
    pub n_jumps: usize,
}

/// Evaluates the double integrals segment by segment with exact
/// antiderivatives; the running sums carry the contribution of all earlier
/// segments forward.
pub fn evaluate_path(kernel: &FkKernel, path: &JumpPath) -> PathFunctionals {
    let k = kernel.omegas.len();
    let mut log_weight = 0.0;
    let mut s_g = vec![0.0; k];
    let mut s0 = vec![0.0; k];
    let mut s1 = vec![0.0; k];
    let mut dbl = vec![0.0; k];
    let mut abs_dbl = vec![0.0; k];
    let mut c = vec![0.0; k];
    for (a, h, state) in path.segments() {
        if h <= 0.0 {
            continue;
        }
        let w = kernel.gen.w[state];
        log_weight += kernel.gen.v[state] * h;
        for m in 0..k {
            let om = kernel.omegas[m];
            let (p0, p1, p2) = psi_moments(om * h);
            let e0 = h * p0;
            let e1 = h * h * p1;
            let decay = (-om * h).exp();
            dbl[m] += w * w * h * h * (p0 - p1) + w * s_g[m] * e0;
            abs_dbl[m] += w * w * h * h * h * (p1 - p2) + w * (s1[m] * e0 + s0[m] * e1);
            c[m] += w * (-om * a).exp() * e0;
            s_g[m] = s_g[m] * decay + w * e0;
            s1[m] = decay * (s1[m] + h * s0[m]) + w * e1;
            s0[m] = decay * s0[m] + w * e0;
        }
    }
    let mut upper = 0.0;
    for m in 0..k {
        log_weight += kernel.nu2[m] * dbl[m];
        upper += kernel.nu2[m] * abs_dbl[m];
    }
    PathFunctionals { log_weight, upper: upper / path.t_end, c, start: path.start, n_jumps: path.jumps.len() }
}

/// Monte Carlo settings shared by the path-space estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FkConfig {
    pub n_paths: usize,
    pub seed: u64,
    pub workers: usize,
    /// Warn when the effective sample size drops below this fraction of `n_paths`.
    pub ess_floor: f64,
}

impl Default for FkConfig {
    fn default() -> Self {
        FkConfig { n_paths: 100_000, seed: 1, workers: 0, ess_floor: 0.1 }
    }
}

/// Paths are regenerated from their index in the second pass, in chunks of
/// this many, so that tables are summed in a fixed order.
const CHUNK: usize = 512;

/// Samples `n_paths` paths with indices starting at `offset` and evaluates
/// their functionals.
pub fn run_paths(kernel: &FkKernel, t_end: f64, cfg: &FkConfig, offset: usize) -> Result<Vec<PathFunctionals>> {
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::invalid("path horizon must be positive"));
    }
    if cfg.n_paths < 2 {
        return Err(Error::invalid("need at least two paths"));
    }
    let seed = cfg.seed;
    par_map_paths(cfg.n_paths, seed, cfg.workers, |i, _| {
        let mut rng = path_rng(seed, (offset + i) as u64);
        evaluate_path(kernel, &sample_path(&kernel.gen, t_end, &mut rng))
    })
}

fn ess_warning(ess: f64, cfg: &FkConfig, what: &str) -> Option<String> {
    (ess < cfg.ess_floor * cfg.n_paths as f64)
        .then(|| format!("{what}: effective sample size {ess:.0} below {:.0}", cfg.ess_floor * cfg.n_paths as f64))
}

/// Weighted correlation table on `grid × grid` (row-major) with standard
/// errors; `parity` holds the jump-parity route for SSB models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTable {
    pub grid: Vec<f64>,
    pub value: Vec<f64>,
    pub se: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parity: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parity_se: Option<Vec<f64>>,
    pub n: u64,
}

impl CorrelationTable {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.value[i * self.grid.len() + j]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FkEstimate {
    pub t: f64,
    pub n_paths: usize,
    pub log_z: Estimate,
    pub ess: f64,
    pub mean_jumps: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correlations: Option<CorrelationTable>,
    pub warnings: Vec<String>,
}

/// Feynman–Kac estimate of `log Z_T` from log-mean-exp of the path weights.
pub fn fk_mc_z(model: &GSBModel, t_end: f64, cfg: &FkConfig) -> Result<FkEstimate> {
    let kernel = FkKernel::new(model)?;
    let paths = run_paths(&kernel, t_end, cfg, 0)?;
    Ok(summarize(t_end, cfg, &paths))
}

fn summarize(t_end: f64, cfg: &FkConfig, paths: &[PathFunctionals]) -> FkEstimate {
    let logw: Vec<f64> = paths.iter().map(|p| p.log_weight).collect();
    let ess = effective_sample_size(&logw);
    let mean_jumps = paths.iter().map(|p| p.n_jumps as f64).sum::<f64>() / paths.len() as f64;
    FkEstimate {
        t: t_end,
        n_paths: paths.len(),
        log_z: log_mean_exp(&logw),
        ess,
        mean_jumps,
        correlations: None,
        warnings: ess_warning(ess, cfg, "fk weights").into_iter().collect(),
    }
}

#[derive(Clone)]
struct TableSums {
    s1: Vec<f64>,
    s2: Vec<f64>,
    s3: Vec<f64>,
}

impl TableSums {
    fn new(n: usize) -> Self {
        TableSums { s1: vec![0.0; n], s2: vec![0.0; n], s3: vec![0.0; n] }
    }

    fn push(&mut self, cell: usize, w: f64, x: f64) {
        self.s1[cell] += w * x;
        self.s2[cell] += w * w * x * x;
        self.s3[cell] += w * w * x;
    }

    fn add(&mut self, o: &TableSums) {
        for i in 0..self.s1.len() {
            self.s1[i] += o.s1[i];
            self.s2[i] += o.s2[i];
            self.s3[i] += o.s3[i];
        }
    }

    /// Self-normalized means and delta-method standard errors.
    fn finish(&self, sw: f64, sw2: f64) -> (Vec<f64>, Vec<f64>) {
        let mean: Vec<f64> = self.s1.iter().map(|s| s / sw).collect();
        let se = (0..mean.len())
            .map(|i| {
                let m = mean[i];
                let v = self.s2[i] - 2.0 * m * self.s3[i] + m * m * sw2;
                v.max(0.0).sqrt() / sw
            })
            .collect();
        (mean, se)
    }
}

/// Path-measure correlations `Ê_T[w(X_s) w(X_t)]` on a grid in `[0, T]`.
///
/// The first pass fixes the log-weights and their maximum; the second
/// regenerates every path from its index and accumulates the table.
pub fn fk_correlations(model: &GSBModel, t_end: f64, grid: &[f64], cfg: &FkConfig) -> Result<FkEstimate> {
    if grid.is_empty() || grid.iter().any(|&s| !(0.0..=t_end).contains(&s)) {
        return Err(Error::invalid("correlation grid must lie in [0, T]"));
    }
    if grid.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::invalid("correlation grid must be strictly increasing"));
    }
    let kernel = FkKernel::new(model)?;
    let paths = run_paths(&kernel, t_end, cfg, 0)?;
    let mut est = summarize(t_end, cfg, &paths);
    let lmax = paths.iter().map(|p| p.log_weight).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = paths.iter().map(|p| (p.log_weight - lmax).exp()).collect();
    let sw: f64 = weights.iter().sum();
    let sw2: f64 = weights.iter().map(|w| w * w).sum();
    let ssb = model.is_ssb();
    let g = grid.len();
    let n_chunks = cfg.n_paths.div_ceil(CHUNK);
    let seed = cfg.seed;
    let chunks = par_map_paths(n_chunks, seed, cfg.workers, |c, _| {
        let mut direct = TableSums::new(g * g);
        let mut parity = TableSums::new(if ssb { g * g } else { 0 });
        let mut ws = vec![0.0; g];
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(cfg.n_paths);
        for (i, &w) in weights.iter().enumerate().take(hi).skip(lo) {
            let mut rng = path_rng(seed, i as u64);
            let path = sample_path(&kernel.gen, t_end, &mut rng);
            for (k, &s) in grid.iter().enumerate() {
                ws[k] = kernel.gen.w[path.state_at(s)];
            }
            let w0 = kernel.gen.w[path.start];
            for a in 0..g {
                for b in 0..g {
                    direct.push(a * g + b, w, ws[a] * ws[b]);
                    if ssb {
                        let sign = if path.jumps_between(grid[a], grid[b]) % 2 == 0 { 1.0 } else { -1.0 };
                        parity.push(a * g + b, w, w0 * w0 * sign);
                    }
                }
            }
        }
        (direct, parity)
    })?;
    let mut direct = TableSums::new(g * g);
    let mut parity = TableSums::new(if ssb { g * g } else { 0 });
    for (d, p) in &chunks {
        direct.add(d);
        parity.add(p);
    }
    let (value, se) = direct.finish(sw, sw2);
    let (pv, pse) = if ssb {
        let (a, b) = parity.finish(sw, sw2);
        (Some(a), Some(b))
    } else {
        (None, None)
    };
    est.correlations =
        Some(CorrelationTable { grid: grid.to_vec(), value, se, parity: pv, parity_se: pse, n: cfg.n_paths as u64 });
    Ok(est)
}

/// Uniform grid of `points` nodes on `[0, T]`.
pub fn uniform_grid(t_end: f64, points: usize) -> Vec<f64> {
    let n = points.max(2);
    (0..n).map(|i| t_end * i as f64 / (n - 1) as f64).collect()
}
