//! One function per subcommand. Each returns the quantities, a free-form
//! results object and any CSV series.

use num_complex::Complex64;
use renewal_spectra::rankone::{
    atom_mass_profile, concavity_check, discretize, dyson_identity_check, e_alpha_t, feynman_hellmann_check, spectral,
    RankOneModel,
};
use renewal_spectra::renewal::{
    atom_via_renewal, build_renewal_transform, classify_singularity, inverse_moment_via_renewal, sample_paths,
    stieltjes_check, RenewalTransform, SimStats,
};
use renewal_spectra::spinboson::{
    exact_ground_report, fk_correlations, fk_mc_z, infrared_integral, infrared_integral_quadrature, spinboson_bounds,
    uniform_grid, Eigensystem, FkConfig,
};
use renewal_spectra::wiener::{atom_quotient_estimate, inverse_moment_estimate, run_schedule, Estimator};
use renewal_spectra::{InverseMoment, LaplaceEvaluator, ProbabilityMeasure};
use serde_json::json;

use crate::config::{validate_times, EstimatorKind, RunConfig};
use crate::report::{num, CsvSeries, Outcome, Provenance, Quantity};
use crate::CliError;

const DEFAULT_T: [f64; 7] = [1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0];

fn provenance(mu: &ProbabilityMeasure) -> Provenance {
    if mu.densities.is_empty() {
        Provenance::Exact
    } else {
        Provenance::Quadrature
    }
}

pub fn transform(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let mu = cfg.measure()?;
    let p = provenance(mu);
    let ts = cfg.schedule_or(&DEFAULT_T)?;
    let ev = LaplaceEvaluator::new(mu.clone());
    let mut out = Outcome::default();
    let mut csv = CsvSeries::new("z_table", &["t", "log_z", "log_z_shifted", "tilted_mean", "tilted_var"]);
    let mut rows = Vec::new();
    for &t in &ts {
        let st = ev.tilted_stats(t);
        let (lz, lzs) = (ev.log_z(t), ev.log_z_shifted(t));
        out.quantities.push(Quantity::det(format!("log_z[t={t}]"), lz, p));
        csv.push([num(t), num(lz), num(lzs), num(st.mean_t), num(st.var_t)]);
        rows.push(
            json!({ "t": t, "log_z": lz, "log_z_shifted": lzs, "tilted_mean": st.mean_t, "tilted_var": st.var_t }),
        );
    }
    out.quantities.push(Quantity::det("infimum_support", ev.e(), Provenance::Exact));
    out.results = json!({ "infimum_support": ev.e(), "mean": mu.mean(), "table": rows });
    out.series.push(csv);
    Ok(out)
}

pub fn atom(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let mu = cfg.measure()?;
    let p = provenance(mu);
    let ts = cfg.schedule_or(&DEFAULT_T)?;
    let ev = LaplaceEvaluator::new(mu.clone());
    let a = &cfg.atom;
    let estimator = match a.estimator {
        EstimatorKind::Average => Estimator::Average,
        EstimatorKind::Quotient => {
            if !(a.kappa > 0.0 && a.kappa < 1.0) {
                return Err(CliError::Config(format!("atom.kappa must lie in (0, 1), got {}", a.kappa)));
            }
            Estimator::Quotient { kappa: a.kappa }
        }
    };
    let tol = &cfg.tolerance;
    let run = run_schedule(&ev, estimator, &ts, tol.window.max(1.0) as usize, tol.rtol)?;
    let mut out = Outcome::default();
    let last = *run.values.last().expect("schedule is non-empty");
    let t_last = *ts.last().expect("schedule is non-empty");
    out.quantities.push(Quantity::det("atom_estimate", last, p));
    if let Some(x) = run.extrapolated {
        out.quantities.push(Quantity::det("atom_extrapolated", x, p));
    }
    out.quantities.push(Quantity::det("atom_reference", mu.atom_at_infimum(), Provenance::Exact));
    if run.max_increase > 1e-10 {
        out.warnings.push(format!("estimate increased by {:e} along the schedule", run.max_increase));
    }
    if !run.converged {
        out.warnings.push(format!("not converged at rtol {} (trend {:?})", tol.rtol, run.trend));
    }
    let mut series = CsvSeries::new("estimate_series", &["t", "estimate"]);
    for (t, v) in ts.iter().zip(&run.values) {
        series.push([num(*t), num(*v)]);
    }
    let mut curve = CsvSeries::new("quotient_curve", &["s", "log_quotient", "quotient"]);
    let n = a.curve_points.max(2);
    for k in 0..n {
        let s = t_last * k as f64 / (n - 1) as f64;
        let lq = ev.log_quotient(s, t_last);
        curve.push([num(s), num(lq), num(lq.exp())]);
    }
    let kappa_value =
        matches!(estimator, Estimator::Quotient { .. }).then(|| atom_quotient_estimate(&ev, a.kappa, t_last));
    out.results = json!({ "run": run, "quotient_at_kappa": kappa_value });
    out.series.extend([series, curve]);
    Ok(out)
}

pub fn inverse_moment(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let mu = cfg.measure()?;
    let p = provenance(mu);
    let ts = cfg.schedule_or(&[25.0, 50.0, 100.0, 200.0])?;
    let ev = LaplaceEvaluator::new(mu.clone());
    let n = cfg.inverse_moment.n;
    if n < 4 {
        return Err(CliError::Config("inverse_moment.n must be at least 4".into()));
    }
    let mut out = Outcome::default();
    let mut series = CsvSeries::new("inverse_moment_series", &["t", "estimate", "estimate_refined", "rel_refinement"]);
    let mut runs = Vec::new();
    for &t in &ts {
        let r = inverse_moment_estimate(&ev, t, n)?;
        out.quantities.push(Quantity::det(format!("inverse_moment[t={t}]"), r.value, p));
        series.push([num(t), num(r.value), num(r.value_refined), num(r.rel_refinement)]);
        runs.push(r);
    }
    let oracle = mu.inverse_moment_oracle()?;
    match oracle {
        InverseMoment::Finite(v) => out.quantities.push(Quantity::det("inverse_moment_oracle", v, p)),
        InverseMoment::Infinite => out.warnings.push("the inverse moment is infinite; estimates grow with t".into()),
    }
    out.results = json!({ "grid": n, "runs": runs, "oracle": oracle });
    out.series.push(series);
    Ok(out)
}

fn transform_summary(tr: &RenewalTransform) -> serde_json::Value {
    json!({
        "e": tr.e, "m": tr.m, "beta": tr.beta,
        "tail": tr.tail, "heavy_tail": tr.heavy_tail, "truncation": tr.report,
        "service_mean": tr.service_mean(),
    })
}

fn build(cfg: &RunConfig) -> Result<(LaplaceEvaluator, RenewalTransform), CliError> {
    let ev = LaplaceEvaluator::new(cfg.measure()?.clone());
    validate_times(&cfg.renewal.t_grid, "renewal.t_grid")?;
    if !(cfg.renewal.horizon > 0.0) || cfg.renewal.n_paths == 0 {
        return Err(CliError::Config("renewal needs horizon > 0 and n_paths > 0".into()));
    }
    let tr = build_renewal_transform(&ev, &cfg.grid_config())?;
    Ok((ev, tr))
}

fn stats_quantities(out: &mut Outcome, s: &SimStats, suffix: &str) {
    out.quantities.push(Quantity::mc(format!("d1_mean{suffix}"), &s.d1));
    out.quantities.push(Quantity::mc(format!("a1_mean{suffix}"), &s.a1));
    out.quantities.push(Quantity::mc(format!("p_t1_censored{suffix}"), &s.p_t1_censored));
    out.quantities.push(Quantity::mc(format!("dormant_fraction{suffix}"), &s.dormant_fraction));
}

pub fn renewal_sim(cfg: &RunConfig, workers: usize) -> Result<Outcome, CliError> {
    let seed = cfg.seed()?;
    let (ev, tr) = build(cfg)?;
    let sim = sample_paths(&tr, &cfg.sim_config(seed, workers))?;
    let s = &sim.stats;
    let mut out = Outcome::default();
    let mut dormant = CsvSeries::new("dormant", &["t", "p_dormant_mc", "se", "n", "p_dormant_exact"]);
    for (t, p) in s.t_grid.iter().zip(&s.p_dormant) {
        let exact = ev.log_z_shifted(*t).exp();
        out.quantities.push(Quantity::mc(format!("p_dormant[t={t}]"), p));
        out.quantities.push(Quantity::det(format!("p_dormant_exact[t={t}]"), exact, provenance(ev.measure())));
        dormant.push([num(*t), num(p.value), num(p.se), p.n.to_string(), num(exact)]);
    }
    stats_quantities(&mut out, s, "");
    let rho = atom_via_renewal(s);
    out.quantities.push(Quantity::mc("atom_via_renewal", &rho));
    let im = inverse_moment_via_renewal(s, cfg.tolerance.max_censored_share);
    if im.applicable {
        out.quantities.push(Quantity::mc("inverse_moment_via_renewal", &im.estimate));
        if !im.stable {
            out.warnings.push(format!(
                "censored cycles carry {:.3} of the a1^2 sum; the inverse-moment estimate is unreliable",
                im.censored_share
            ));
        }
    }
    out.warnings.extend(s.warnings.iter().cloned());
    out.results = json!({
        "transform": transform_summary(&tr),
        "stats": s,
        "atom_via_renewal": rho,
        "inverse_moment_via_renewal": im,
    });
    out.series.push(dormant);
    if !sim.events.is_empty() {
        let mut ev_csv = CsvSeries::new("events", &["path", "t", "event", "cycle"]);
        for e in &sim.events {
            let kind =
                serde_json::to_value(e.event).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
            ev_csv.push([e.path.to_string(), num(e.t), kind, e.cycle.to_string()]);
        }
        out.series.push(ev_csv);
    }
    Ok(out)
}

pub fn stieltjes(cfg: &RunConfig, workers: usize) -> Result<Outcome, CliError> {
    let seed = cfg.seed()?;
    let (ev, tr) = build(cfg)?;
    if cfg.stieltjes.z.is_empty() {
        return Err(CliError::Config("stieltjes.z is empty".into()));
    }
    let sim = sample_paths(&tr, &cfg.sim_config(seed, workers))?;
    let mut out = Outcome::default();
    let mut csv = CsvSeries::new(
        "stieltjes",
        &["z_re", "z_im", "lhs_re", "lhs_im", "rhs_re", "rhs_im", "rhs_se", "z_score", "censor_bias_bound"],
    );
    let mut checks = Vec::new();
    for &[re, im] in &cfg.stieltjes.z {
        let z = Complex64::new(re, im);
        let c = stieltjes_check(&ev, &tr, &sim.first_cycles, cfg.renewal.horizon, z)?;
        let label = format!("{re}{im:+}i");
        let p = provenance(ev.measure());
        out.quantities.push(Quantity::det(format!("lhs_re[z={label}]"), c.lhs.re, p));
        out.quantities.push(Quantity::det(format!("lhs_im[z={label}]"), c.lhs.im, p));
        let n = c.n as u64;
        for (part, v) in [("re", c.rhs.re), ("im", c.rhs.im)] {
            out.quantities.push(Quantity {
                name: format!("rhs_{part}[z={label}]"),
                value: v,
                provenance: Provenance::Mc,
                se: Some(c.rhs_se),
                n: Some(n),
            });
        }
        csv.push([
            num(re),
            num(im),
            num(c.lhs.re),
            num(c.lhs.im),
            num(c.rhs.re),
            num(c.rhs.im),
            num(c.rhs_se),
            num(c.z_score()),
            num(c.censor_bias_bound),
        ]);
        checks.push(json!({ "check": c, "z_score": c.z_score() }));
    }
    out.warnings.extend(sim.stats.warnings.iter().cloned());
    out.results = json!({ "transform": transform_summary(&tr), "checks": checks });
    out.series.push(csv);
    Ok(out)
}

pub fn classify(cfg: &RunConfig, workers: usize) -> Result<Outcome, CliError> {
    let seed = cfg.seed()?;
    let (_, tr) = build(cfg)?;
    let mut sc = cfg.sim_config(seed, workers);
    let at_t = sample_paths(&tr, &sc)?.stats;
    sc.horizon *= 2.0;
    let at_2t = sample_paths(&tr, &sc)?.stats;
    let class = classify_singularity(&at_t, &at_2t, &cfg.classify);
    let mut out = Outcome::default();
    stats_quantities(&mut out, &at_t, "[T]");
    stats_quantities(&mut out, &at_2t, "[2T]");
    out.warnings.push("classification is a finite-horizon diagnostic".into());
    out.results = json!({
        "transform": transform_summary(&tr),
        "classification": class,
        "thresholds": cfg.classify,
        "horizon": cfg.renewal.horizon,
        "stats_t": at_t,
        "stats_2t": at_2t,
    });
    Ok(out)
}

pub fn rankone(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let sec = cfg.rankone.as_ref().ok_or_else(|| CliError::Config("missing [rankone] table".into()))?;
    let model = match (&sec.x, &sec.w, sec.nodes) {
        (Some(x), Some(w), None) => RankOneModel::new(x.clone(), w.clone())?,
        (None, None, Some(n)) => discretize(cfg.measure()?, n, sec.t_max, 1e-6)?,
        _ => return Err(CliError::Config("rankone takes either `x` and `w`, or `nodes` with a [measure]".into())),
    };
    let alphas = sec.alpha_grid()?;
    if !(sec.t > 0.0 && sec.fh_h > 0.0) {
        return Err(CliError::Config("rankone.t and rankone.fh_h must be positive".into()));
    }
    let mut out = Outcome::default();
    let mut csv = CsvSeries::new("rankone_alpha", &["alpha", "e_alpha", "atom_mass", "degeneracy", "e_alpha_t"]);
    let mut spectra = Vec::new();
    for &a in &alphas {
        let s = spectral(&model, a);
        let et = e_alpha_t(&model, a, sec.t);
        csv.push([num(a), num(s.e_alpha), num(s.atom_mass_alpha), s.degeneracy.to_string(), num(et)]);
        spectra.push(json!({ "alpha": a, "e_alpha": s.e_alpha, "atom_mass": s.atom_mass_alpha, "degeneracy": s.degeneracy, "e_alpha_t": et }));
    }
    let dyson = [dyson_identity_check(&model, sec.t, 1)?, dyson_identity_check(&model, sec.t, 2)?];
    for d in &dyson {
        out.quantities.push(Quantity::det(format!("dyson_rel_err[order={}]", d.order), d.rel_err(), Provenance::Exact));
    }
    let concavity = concavity_check(&model, sec.t, &alphas)?;
    if !concavity.concave {
        out.warnings.push("E_{alpha,t} failed the concavity check".into());
    }
    let fh = alphas
        .iter()
        .filter(|&&a| a <= 0.0)
        .map(|&a| feynman_hellmann_check(&model, a, sec.fh_h))
        .collect::<Result<Vec<_>, _>>()?;
    let fh_failures = fh.iter().filter(|c| !c.holds).count();
    if fh_failures > 0 {
        out.warnings.push(format!("Feynman-Hellmann bracketing failed at {fh_failures} alpha values"));
    }
    let (_, max_increase) = atom_mass_profile(&model, &alphas);
    if max_increase > 1e-12 {
        out.warnings.push(format!("atom mass increased by {max_increase:e} along the alpha grid"));
    }
    out.quantities.push(Quantity::det("atom_mass_max_increase", max_increase, Provenance::Exact));
    out.results = json!({
        "model": model,
        "t": sec.t,
        "spectra": spectra,
        "dyson": dyson,
        "concavity": concavity,
        "feynman_hellmann": fh,
    });
    out.series.push(csv);
    Ok(out)
}

pub fn spinboson_exact(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let model = cfg.model()?;
    let sb = &cfg.spinboson;
    validate_times(&sb.t, "spinboson.t")?;
    let g = exact_ground_report(model, sb.cap, cfg.tolerance.truncation_atol)?;
    if !g.converged {
        return Err(CliError::Gate(format!(
            "truncation not converged at n_max = {}: |dE| = {:e}, |d rho| = {:e}, atol {:e}",
            g.n_max, g.delta_energy, g.delta_rho, cfg.tolerance.truncation_atol
        )));
    }
    let es = Eigensystem::new(model, sb.cap)?;
    let mut out = Outcome::default();
    for (name, v) in
        [("ground_energy", g.energy), ("rho", g.rho), ("log_inv_rho", g.log_inv_rho), ("boson_number", g.phi_number)]
    {
        out.quantities.push(Quantity::det(name, v, Provenance::Exact));
    }
    let mut csv = CsvSeries::new("log_z_exact", &["t", "log_z"]);
    for &t in &sb.t {
        let lz = es.log_z(t);
        out.quantities.push(Quantity::det(format!("log_z[t={t}]"), lz, Provenance::Exact));
        csv.push([num(t), num(lz)]);
    }
    let mut ir = Vec::new();
    for &a in &sb.infrared {
        let c = infrared_integral(model, a)?;
        let q = infrared_integral_quadrature(model, a)?;
        out.quantities.push(Quantity::det(format!("infrared[a={a}]"), c, Provenance::Exact));
        out.quantities.push(Quantity::det(format!("infrared_quadrature[a={a}]"), q, Provenance::Quadrature));
        ir.push(json!({ "exponent": a, "closed_form": c, "quadrature": q }));
    }
    out.results = json!({ "ground": g, "infrared": ir });
    out.series.push(csv);
    Ok(out)
}

fn fk_config(cfg: &RunConfig, seed: u64, workers: usize) -> Result<FkConfig, CliError> {
    if cfg.spinboson.n_paths < 2 {
        return Err(CliError::Config("spinboson.n_paths must be at least 2".into()));
    }
    Ok(FkConfig { n_paths: cfg.spinboson.n_paths, seed, workers, ess_floor: cfg.tolerance.ess_floor })
}

pub fn spinboson_fk(cfg: &RunConfig, workers: usize) -> Result<Outcome, CliError> {
    let seed = cfg.seed()?;
    let model = cfg.model()?;
    let sb = &cfg.spinboson;
    validate_times(&sb.t, "spinboson.t")?;
    let fc = fk_config(cfg, seed, workers)?;
    // The exact reference is optional: large truncations may exceed the cap.
    let exact = Eigensystem::new(model, sb.cap).ok();
    let mut out = Outcome::default();
    let mut csv = CsvSeries::new("log_z_fk", &["t", "log_z", "se", "n", "ess", "log_z_exact"]);
    let mut runs = Vec::new();
    let t_last = *sb.t.last().expect("validated non-empty");
    for &t in &sb.t {
        let est = if sb.correlation_points >= 2 && t == t_last {
            fk_correlations(model, t, &uniform_grid(t, sb.correlation_points), &fc)?
        } else {
            fk_mc_z(model, t, &fc)?
        };
        out.quantities.push(Quantity::mc(format!("log_z[t={t}]"), &est.log_z));
        let ex = exact.as_ref().map(|e| e.log_z(t));
        if let Some(v) = ex {
            out.quantities.push(Quantity::det(format!("log_z_exact[t={t}]"), v, Provenance::Exact));
        }
        csv.push([
            num(t),
            num(est.log_z.value),
            num(est.log_z.se),
            est.log_z.n.to_string(),
            num(est.ess),
            ex.map(num).unwrap_or_default(),
        ]);
        out.warnings.extend(est.warnings.iter().map(|w| format!("T={t}: {w}")));
        runs.push(est);
    }
    out.series.push(csv);
    if let Some(table) = runs.last().and_then(|r| r.correlations.as_ref()) {
        let exact_table = exact.as_ref().map(|e| e.correlations(t_last, &table.grid));
        let m = table.grid.len();
        let mut corr = CsvSeries::new("correlations", &["s", "s_prime", "value", "se", "exact"]);
        for i in 0..m {
            for j in 0..m {
                let k = i * m + j;
                corr.push([
                    num(table.grid[i]),
                    num(table.grid[j]),
                    num(table.value[k]),
                    num(table.se[k]),
                    exact_table.as_ref().map(|e| num(e[k])).unwrap_or_default(),
                ]);
            }
        }
        out.series.push(corr);
    }
    if exact.is_none() {
        out.warnings.push(format!("no exact reference: truncated dimension exceeds cap {}", sb.cap));
    }
    out.results = json!({ "runs": runs });
    Ok(out)
}

pub fn spinboson_bounds_cmd(cfg: &RunConfig, workers: usize) -> Result<Outcome, CliError> {
    let seed = cfg.seed()?;
    let model = cfg.model()?;
    let sb = &cfg.spinboson;
    if !(sb.t_bounds > 0.0) {
        return Err(CliError::Config("spinboson.t_bounds must be positive".into()));
    }
    let fc = fk_config(cfg, seed, workers)?;
    let g = exact_ground_report(model, sb.cap, cfg.tolerance.truncation_atol)?;
    if !g.converged {
        return Err(CliError::Gate(format!(
            "truncation not converged at n_max = {}: |dE| = {:e}, |d rho| = {:e}",
            g.n_max, g.delta_energy, g.delta_rho
        )));
    }
    let r = spinboson_bounds(model, sb.t_bounds, &fc, sb.cap, cfg.tolerance.k_se)?;
    let mut out = Outcome::default();
    out.quantities.push(Quantity::det("log_inv_rho", r.ground.log_inv_rho, Provenance::Exact));
    out.quantities.push(Quantity::det("boson_number", r.ground.phi_number, Provenance::Exact));
    out.quantities.push(Quantity::mc("upper_bound", &r.upper.general));
    out.quantities.push(Quantity::mc("upper_functional", &r.upper.functional));
    out.quantities.push(Quantity::det("upper_functional_exact", r.exact_upper_functional, Provenance::Exact));
    out.quantities.push(Quantity::mc("lower_bound", &r.lower.value));
    out.quantities.push(Quantity::det("lower_bound_exact", r.exact_lower, Provenance::Exact));
    if !r.upper_holds {
        out.warnings.push(format!("upper bound below log(1/rho) beyond {} s.e.", r.k_se));
    }
    if !r.lower_holds {
        out.warnings.push(format!("lower bound above log(1/rho) beyond {} s.e.", r.k_se));
    }
    out.warnings.extend(r.lower.warnings.iter().cloned());
    out.results = json!({ "bounds": r });
    Ok(out)
}
