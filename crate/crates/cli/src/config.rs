//! Run configuration: TOML with an `include` list, flag overrides, and typed
//! per-command sections.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use renewal_spectra::renewal::{ClassifyThresholds, GridConfig, SimConfig};
use renewal_spectra::spinboson::{GSBModel, DEFAULT_CAP, TRUNCATION_ATOL};
use renewal_spectra::wiener::DEFAULT_GRID;
use renewal_spectra::ProbabilityMeasure;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::CliError;

/// Reads `path`, resolving `include = [...]` entries relative to the including
/// file. Included tables are merged first, so the including file wins.
pub fn load_table(path: &Path) -> Result<Table, CliError> {
    let mut seen = HashSet::new();
    load_rec(path, &mut seen)
}

fn load_rec(path: &Path, stack: &mut HashSet<PathBuf>) -> Result<Table, CliError> {
    let canon = path.canonicalize().map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if !stack.insert(canon.clone()) {
        return Err(CliError::Config(format!("include cycle through {}", path.display())));
    }
    let text = fs::read_to_string(&canon).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let mut table: Table = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let includes = match table.remove("include") {
        None => Vec::new(),
        Some(Value::String(s)) => vec![s],
        Some(Value::Array(items)) => items
            .into_iter()
            .map(|v| match v {
                Value::String(s) => Ok(s),
                other => Err(CliError::Config(format!("include entries must be strings, got {other}"))),
            })
            .collect::<Result<_, _>>()?,
        Some(other) => return Err(CliError::Config(format!("include must be a string or array, got {other}"))),
    };
    let dir = canon.parent().unwrap_or(Path::new("."));
    let mut base = Table::new();
    for inc in includes {
        merge(&mut base, load_rec(&dir.join(inc), stack)?);
    }
    merge(&mut base, table);
    stack.remove(&canon);
    Ok(base)
}

/// Deep merge; tables merge key by key, everything else is replaced.
pub fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Applies `--seed` and `--tolerance key=value` to the raw table.
pub fn apply_overrides(table: &mut Table, seed: Option<u64>, tolerances: &[String]) -> Result<(), CliError> {
    if let Some(s) = seed {
        let s = i64::try_from(s).map_err(|_| CliError::Config(format!("seed {s} exceeds the TOML integer range")))?;
        table.insert("seed".into(), Value::Integer(s));
    }
    for item in tolerances {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--tolerance expects key=value, got {item:?}")))?;
        let v: f64 = v.trim().parse().map_err(|_| CliError::Config(format!("--tolerance {k}: not a number: {v:?}")))?;
        let tol = table.entry("tolerance").or_insert_with(|| Value::Table(Table::new()));
        match tol {
            Value::Table(t) => {
                t.insert(k.trim().to_string(), Value::Float(v));
            }
            _ => return Err(CliError::Config("tolerance must be a table".into())),
        }
    }
    Ok(())
}

pub fn parse(table: Table) -> Result<RunConfig, CliError> {
    Value::Table(table).try_into::<RunConfig>().map_err(|e| CliError::Config(e.to_string()))
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<String>,
    pub seed: Option<u64>,
    pub measure: Option<ProbabilityMeasure>,
    pub model: Option<GSBModel>,
    pub schedule: Option<Schedule>,
    #[serde(default)]
    pub tolerance: Tolerances,
    #[serde(default)]
    pub atom: AtomSection,
    #[serde(default)]
    pub inverse_moment: InverseMomentSection,
    #[serde(default)]
    pub renewal: RenewalSection,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub stieltjes: StieltjesSection,
    #[serde(default)]
    pub classify: ClassifyThresholds,
    pub rankone: Option<RankOneSection>,
    #[serde(default)]
    pub spinboson: SpinbosonSection,
}

impl RunConfig {
    pub fn measure(&self) -> Result<&ProbabilityMeasure, CliError> {
        let m = self.measure.as_ref().ok_or_else(|| CliError::Config("missing [measure] table".into()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn model(&self) -> Result<&GSBModel, CliError> {
        let m = self.model.as_ref().ok_or_else(|| CliError::Config("missing [model] table".into()))?;
        m.validate()?;
        Ok(m)
    }

    /// Seeds are never defaulted for stochastic commands.
    pub fn seed(&self) -> Result<u64, CliError> {
        self.seed.ok_or_else(|| {
            CliError::Config("this command is stochastic: set `seed` in the config or pass --seed".into())
        })
    }

    pub fn schedule_or(&self, default: &[f64]) -> Result<Vec<f64>, CliError> {
        match &self.schedule {
            Some(s) => s.times(),
            None => Ok(default.to_vec()),
        }
    }

    pub fn sim_config(&self, seed: u64, workers: usize) -> SimConfig {
        let r = &self.renewal;
        SimConfig {
            horizon: r.horizon,
            n_paths: r.n_paths,
            seed,
            workers,
            t_grid: r.t_grid.clone(),
            censor_warn: self.tolerance.censor_warn,
            event_log_paths: r.event_log_paths,
        }
    }

    pub fn grid_config(&self) -> GridConfig {
        GridConfig { rtol: self.tolerance.grid_rtol.unwrap_or(self.grid.rtol), ..self.grid }
    }
}

/// Either an explicit list `t = [...]` or `start`/`stop`/`points` with
/// geometric (default) or linear spacing.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub t: Option<Vec<f64>>,
    pub start: Option<f64>,
    pub stop: Option<f64>,
    pub points: Option<usize>,
    #[serde(default)]
    pub spacing: Spacing,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    #[default]
    Geometric,
    Linear,
}

impl Schedule {
    pub fn times(&self) -> Result<Vec<f64>, CliError> {
        let ts = match (&self.t, self.start, self.stop, self.points) {
            (Some(t), None, None, None) => t.clone(),
            (None, Some(a), Some(b), Some(n)) => {
                if n < 2 {
                    return Err(CliError::Config("schedule needs at least 2 points".into()));
                }
                if self.spacing == Spacing::Geometric && !(a > 0.0) {
                    return Err(CliError::Config("geometric schedule needs start > 0".into()));
                }
                (0..n)
                    .map(|k| {
                        let f = k as f64 / (n - 1) as f64;
                        match self.spacing {
                            Spacing::Geometric => a * (b / a).powf(f),
                            Spacing::Linear => a + (b - a) * f,
                        }
                    })
                    .collect()
            }
            _ => return Err(CliError::Config("schedule takes either `t` or `start`, `stop` and `points`".into())),
        };
        validate_times(&ts, "schedule")?;
        Ok(ts)
    }
}

pub fn validate_times(ts: &[f64], what: &str) -> Result<(), CliError> {
    if ts.is_empty() {
        return Err(CliError::Config(format!("{what} is empty")));
    }
    if ts.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
        return Err(CliError::Config(format!("{what} entries must be positive and finite")));
    }
    if ts.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CliError::Config(format!("{what} must be strictly increasing")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Relative change that counts as converged along a schedule.
    pub rtol: f64,
    /// Successive changes below `rtol` needed to declare convergence.
    pub window: f64,
    /// Overrides `[grid].rtol` for the renewal transform.
    pub grid_rtol: Option<f64>,
    pub censor_warn: f64,
    pub max_censored_share: f64,
    pub truncation_atol: f64,
    pub k_se: f64,
    pub ess_floor: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            rtol: 1e-3,
            window: 3.0,
            grid_rtol: None,
            censor_warn: 0.05,
            max_censored_share: 0.05,
            truncation_atol: TRUNCATION_ATOL,
            k_se: 3.0,
            ess_floor: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    #[default]
    Average,
    Quotient,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AtomSection {
    pub estimator: EstimatorKind,
    pub kappa: f64,
    /// Points of the `s ↦ Z_{t-s} Z_s / Z_t` curve exported at the last t.
    pub curve_points: usize,
}

impl Default for AtomSection {
    fn default() -> Self {
        AtomSection { estimator: EstimatorKind::Average, kappa: 0.5, curve_points: 101 }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InverseMomentSection {
    pub n: usize,
}

impl Default for InverseMomentSection {
    fn default() -> Self {
        InverseMomentSection { n: DEFAULT_GRID }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenewalSection {
    pub horizon: f64,
    pub n_paths: usize,
    pub t_grid: Vec<f64>,
    pub event_log_paths: usize,
}

impl Default for RenewalSection {
    fn default() -> Self {
        let d = SimConfig::default();
        RenewalSection { horizon: d.horizon, n_paths: d.n_paths, t_grid: d.t_grid, event_log_paths: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StieltjesSection {
    /// Points as `[re, im]` pairs, all with `re < E`.
    pub z: Vec<[f64; 2]>,
}

impl Default for StieltjesSection {
    fn default() -> Self {
        StieltjesSection { z: vec![[-0.5, 0.0], [-1.0, 0.0], [-2.0, 0.0], [-1.0, 0.5]] }
    }
}

/// A rank-one model given directly as `x`/`w`, or discretized from `[measure]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankOneSection {
    pub x: Option<Vec<f64>>,
    pub w: Option<Vec<f64>>,
    pub nodes: Option<usize>,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
    #[serde(default = "default_alphas")]
    pub alphas: Schedule,
    #[serde(default = "default_rank_t")]
    pub t: f64,
    #[serde(default = "default_fh_h")]
    pub fh_h: f64,
}

fn default_t_max() -> f64 {
    10.0
}

fn default_alphas() -> Schedule {
    Schedule { t: None, start: Some(-2.0), stop: Some(2.0), points: Some(41), spacing: Spacing::Linear }
}

fn default_rank_t() -> f64 {
    10.0
}

fn default_fh_h() -> f64 {
    1e-4
}

impl RankOneSection {
    /// α grid: strictly increasing, signs allowed.
    pub fn alpha_grid(&self) -> Result<Vec<f64>, CliError> {
        let s = &self.alphas;
        let a = match (&s.t, s.start, s.stop, s.points) {
            (Some(t), None, None, None) => t.clone(),
            (None, Some(a), Some(b), Some(n)) if n >= 2 => {
                (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect()
            }
            _ => return Err(CliError::Config("alphas take `t = [...]` or start/stop/points (always linear)".into())),
        };
        if a.is_empty() || a.iter().any(|x| !x.is_finite()) || a.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CliError::Config("alphas must be finite and strictly increasing".into()));
        }
        Ok(a)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpinbosonSection {
    /// Times for log Z (exact and Feynman–Kac).
    pub t: Vec<f64>,
    pub n_paths: usize,
    pub cap: usize,
    /// Grid points of the correlation table at the last t; 0 disables it.
    pub correlation_points: usize,
    /// T used by the bounds command.
    pub t_bounds: f64,
    /// Exponents for the infrared integral (exact command).
    pub infrared: Vec<f64>,
}

impl Default for SpinbosonSection {
    fn default() -> Self {
        SpinbosonSection {
            t: vec![1.0, 2.0, 4.0],
            n_paths: 100_000,
            cap: DEFAULT_CAP,
            correlation_points: 0,
            t_bounds: 16.0,
            infrared: Vec::new(),
        }
    }
}
