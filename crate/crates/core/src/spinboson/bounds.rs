use serde::{Deserialize, Serialize};

use super::exact::{exact_ground, lower_from_terms, Eigensystem, ExactGround};
use super::fk::{run_paths, CorrelationTable, FkConfig, FkKernel, PathFunctionals};
use super::model::GSBModel;
use crate::error::{Error, Result};
use crate::stats::{effective_sample_size, self_normalized_mean, Estimate};

/// Jackknife blocks for the paired lower-bound estimator.
const JACKKNIFE_BLOCKS: usize = 20;

/// Which form of the upper bound to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpperForm {
    /// `log d + (1/2T)∬ |t-s| g Ŵ`.
    General,
    /// The two-level parity form without `log d`.
    Ssb,
}

fn trapezoid_weights(grid: &[f64]) -> Vec<f64> {
    let n = grid.len();
    (0..n)
        .map(|i| {
            let left = if i > 0 { grid[i] - grid[i - 1] } else { 0.0 };
            let right = if i + 1 < n { grid[i + 1] - grid[i] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect()
}

/// `(1/2T) ∬ |t-s| g(t-s) Ŵ(s,t) ds dt` by the tensor trapezoid rule on the
/// table grid, which must span `[0, T]`.
pub fn upper_functional_grid(model: &GSBModel, t_end: f64, table: &CorrelationTable) -> Result<f64> {
    let g = &table.grid;
    if g.len() < 2 || g[0] != 0.0 || (g[g.len() - 1] - t_end).abs() > 1e-12 * t_end {
        return Err(Error::invalid("correlation grid must cover [0, T]"));
    }
    let w = trapezoid_weights(g);
    let mut acc = 0.0;
    for i in 0..g.len() {
        for j in 0..g.len() {
            let r = (g[i] - g[j]).abs();
            acc += w[i] * w[j] * r * model.g(r) * table.at(i, j);
        }
    }
    Ok(acc / (2.0 * t_end))
}

/// Grid route for the upper bound on `log(1/ρ)`.
pub fn bound_log_inv_rho_upper(model: &GSBModel, t_end: f64, table: &CorrelationTable, form: UpperForm) -> Result<f64> {
    let f = upper_functional_grid(model, t_end, table)?;
    Ok(match form {
        UpperForm::General => (model.dim() as f64).ln() + f,
        UpperForm::Ssb => f,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpperBound {
    pub t: f64,
    pub log_d: f64,
    pub ssb: bool,
    /// Path-measure mean of the exact per-path functional.
    pub functional: Estimate,
    /// `log d + functional`.
    pub general: Estimate,
    /// `functional` alone, reported for SSB models.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ssb_form: Option<Estimate>,
    pub ess: f64,
}

fn upper_from_paths(model: &GSBModel, t_end: f64, paths: &[PathFunctionals]) -> UpperBound {
    let logw: Vec<f64> = paths.iter().map(|p| p.log_weight).collect();
    let xs: Vec<f64> = paths.iter().map(|p| p.upper).collect();
    let functional = self_normalized_mean(&logw, &xs);
    let log_d = (model.dim() as f64).ln();
    let ssb = model.is_ssb();
    UpperBound {
        t: t_end,
        log_d,
        ssb,
        functional,
        general: Estimate { value: log_d + functional.value, ..functional },
        ssb_form: ssb.then_some(functional),
        ess: effective_sample_size(&logw),
    }
}

/// Monte Carlo upper bound from the exact per-path `|t-s|` functional.
pub fn upper_bound_mc(model: &GSBModel, t_end: f64, cfg: &FkConfig) -> Result<UpperBound> {
    let kernel = FkKernel::new(model)?;
    let paths = run_paths(&kernel, t_end, cfg, 0)?;
    Ok(upper_from_paths(model, t_end, &paths))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBound {
    pub t: f64,
    pub value: Estimate,
    /// Estimated start law `P_T(X_0 = i)` from the first ensemble.
    pub start_law: Vec<f64>,
    pub ess: [f64; 2],
    pub warnings: Vec<String>,
}

/// Per-block sums `Σw`, `Σw 1{X_0=i}` and `Σw 1{X_0=i} c_k`.
#[derive(Debug, Clone)]
struct Block {
    sw: f64,
    p: Vec<f64>,
    a: Vec<Vec<f64>>,
}

impl Block {
    fn new(d: usize, k: usize) -> Self {
        Block { sw: 0.0, p: vec![0.0; d], a: vec![vec![0.0; k]; d] }
    }

    fn add(&mut self, o: &Block, sign: f64) {
        self.sw += sign * o.sw;
        for i in 0..self.p.len() {
            self.p[i] += sign * o.p[i];
            for k in 0..self.a[i].len() {
                self.a[i][k] += sign * o.a[i][k];
            }
        }
    }

    fn normalized(&self) -> (Vec<f64>, Vec<Vec<f64>>) {
        let p = self.p.iter().map(|x| x / self.sw).collect();
        let a = self.a.iter().map(|r| r.iter().map(|x| x / self.sw).collect()).collect();
        (p, a)
    }
}

fn blocks(paths: &[PathFunctionals], d: usize, k: usize) -> Vec<Block> {
    let lmax = paths.iter().map(|p| p.log_weight).fold(f64::NEG_INFINITY, f64::max);
    let size = paths.len().div_ceil(JACKKNIFE_BLOCKS);
    paths
        .chunks(size)
        .map(|chunk| {
            let mut b = Block::new(d, k);
            for p in chunk {
                let w = (p.log_weight - lmax).exp();
                b.sw += w;
                b.p[p.start] += w;
                for m in 0..k {
                    b.a[p.start][m] += w * p.c[m];
                }
            }
            b
        })
        .collect()
}

/// Paired-ensemble estimate of
/// `∬_{[0,T]²} g(u+v) Ê_{T,T}[w(X_u) w(Y_v) | X_0 = Y_0] du dv`.
///
/// The kernel factorizes over modes, so each path only contributes its start
/// state and the numbers `c_k`. The second ensemble uses path indices
/// `n..2n`, independent of the first. Standard error by a 20-block
/// delete-one jackknife over both ensembles at once.
pub fn bound_log_inv_rho_lower(model: &GSBModel, t_end: f64, cfg: &FkConfig) -> Result<LowerBound> {
    let kernel = FkKernel::new(model)?;
    let d = model.dim();
    let modes: Vec<(f64, f64)> = model.field.modes.iter().map(|m| (m.omega, m.nu)).collect();
    let k = modes.len();
    let x = run_paths(&kernel, t_end, cfg, 0)?;
    let y = run_paths(&kernel, t_end, cfg, cfg.n_paths)?;
    let bx = blocks(&x, d, k);
    let by = blocks(&y, d, k);
    let total = |bs: &[Block]| {
        let mut t = Block::new(d, k);
        for b in bs {
            t.add(b, 1.0);
        }
        t
    };
    let tx = total(&bx);
    let ty = total(&by);
    let (px, ax) = tx.normalized();
    let (py, ay) = ty.normalized();
    let value = lower_from_terms(&modes, &px, &ax, &py, &ay);
    let nb = bx.len().min(by.len());
    let loo: Vec<f64> = (0..nb)
        .map(|b| {
            let mut lx = tx.clone();
            lx.add(&bx[b], -1.0);
            let mut ly = ty.clone();
            ly.add(&by[b], -1.0);
            let (px, ax) = lx.normalized();
            let (py, ay) = ly.normalized();
            lower_from_terms(&modes, &px, &ax, &py, &ay)
        })
        .collect();
    let mean = loo.iter().sum::<f64>() / nb as f64;
    let var = loo.iter().map(|l| (l - mean).powi(2)).sum::<f64>() * (nb - 1) as f64 / nb as f64;
    let ess = [
        effective_sample_size(&x.iter().map(|p| p.log_weight).collect::<Vec<_>>()),
        effective_sample_size(&y.iter().map(|p| p.log_weight).collect::<Vec<_>>()),
    ];
    let floor = cfg.ess_floor * cfg.n_paths as f64;
    let warnings = ess
        .iter()
        .filter(|&&e| e < floor)
        .map(|e| format!("lower bound: effective sample size {e:.0} below {floor:.0}"))
        .collect();
    Ok(LowerBound {
        t: t_end,
        value: Estimate { value, se: var.sqrt(), n: 2 * cfg.n_paths as u64 },
        start_law: px,
        ess,
        warnings,
    })
}

/// Exact references next to the Monte Carlo bounds at one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsReport {
    pub t: f64,
    pub ground: ExactGround,
    /// Exact value of the upper-bound functional, without `log d`.
    pub exact_upper_functional: f64,
    pub exact_lower: f64,
    pub upper: UpperBound,
    pub lower: LowerBound,
    /// Number of standard errors allowed in the inequality checks.
    pub k_se: f64,
    /// `log d + functional ≥ log(1/ρ)` within tolerance.
    pub upper_holds: bool,
    /// `lower ≤ log(1/ρ)` within tolerance.
    pub lower_holds: bool,
}

pub fn spinboson_bounds(model: &GSBModel, t_end: f64, cfg: &FkConfig, cap: usize, k_se: f64) -> Result<BoundsReport> {
    let ground = exact_ground(model, cap)?;
    let es = Eigensystem::new(model, cap)?;
    let upper = upper_bound_mc(model, t_end, cfg)?;
    let lower = bound_log_inv_rho_lower(model, t_end, cfg)?;
    let target = ground.log_inv_rho;
    let upper_holds = upper.general.value + k_se * upper.general.se >= target;
    let lower_holds = lower.value.value - k_se * lower.value.se <= target;
    Ok(BoundsReport {
        t: t_end,
        exact_upper_functional: es.upper_functional(t_end),
        exact_lower: es.lower_functional(t_end),
        ground,
        upper,
        lower,
        k_se,
        upper_holds,
        lower_holds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spinboson::exact::DEFAULT_CAP;
    use crate::spinboson::fk::{fk_correlations, uniform_grid};

    fn cfg(n: usize) -> FkConfig {
        FkConfig { n_paths: n, seed: 21, workers: 0, ess_floor: 0.1 }
    }

    #[test]
    fn decoupled_upper_bound_is_log_d() {
        let m = GSBModel::ssb(1.0, 1.0, 0.0, 2).unwrap();
        let u = upper_bound_mc(&m, 4.0, &cfg(1000)).unwrap();
        assert_eq!(u.functional.value, 0.0);
        assert!((u.general.value - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn upper_routes_agree_with_exact() {
        let m = GSBModel::ssb(1.0, 1.0, 0.2, 12).unwrap();
        let es = Eigensystem::new(&m, DEFAULT_CAP).unwrap();
        let t = 4.0;
        let u = upper_bound_mc(&m, t, &cfg(20_000)).unwrap();
        let exact = es.upper_functional(t);
        assert!(u.functional.within(exact, 4.0), "{:?} vs {exact}", u.functional);
        let c = fk_correlations(&m, t, &uniform_grid(t, 41), &cfg(20_000)).unwrap();
        let grid = bound_log_inv_rho_upper(&m, t, c.correlations.as_ref().unwrap(), UpperForm::Ssb).unwrap();
        assert!((grid - exact).abs() < 0.05 * exact, "{grid} vs {exact}");
    }

    #[test]
    fn lower_bound_matches_exact_functional() {
        let m = GSBModel::three_level(8).unwrap();
        let es = Eigensystem::new(&m, DEFAULT_CAP).unwrap();
        let t = 4.0;
        let l = bound_log_inv_rho_lower(&m, t, &cfg(20_000)).unwrap();
        let exact = es.lower_functional(t);
        assert!(l.value.within(exact, 4.0), "{:?} vs {exact}", l.value);
    }

    #[test]
    fn ssb_lower_bound_factorizes() {
        // with w odd under the spin flip the conditional correlation factorizes
        let m = GSBModel::ssb(1.0, 1.0, 0.2, 12).unwrap();
        let es = Eigensystem::new(&m, DEFAULT_CAP).unwrap();
        let (p, a) = es.lower_bound_terms(4.0);
        assert!((p[0] - 0.5).abs() < 1e-12);
        assert!((a[0][0] + a[1][0]).abs() < 1e-12);
    }

    #[test]
    fn report_checks_both_inequalities() {
        let m = GSBModel::ssb(0.5, 1.0, 0.2, 12).unwrap();
        let r = spinboson_bounds(&m, 4.0, &cfg(5000), DEFAULT_CAP, 3.0).unwrap();
        assert!(r.upper_holds && r.lower_holds, "{r:?}");
        assert!(r.upper.ssb_form.is_some());
    }
}
