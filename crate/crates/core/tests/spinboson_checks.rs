use renewal_spectra::spinboson::{
    assemble_truncated, build_generator, exact_ground_report, fk_correlations, fk_mc_z, uniform_grid, upper_bound_mc,
    BosonField, Eigensystem, FkConfig, GSBModel, Mode, SpinSystem, DEFAULT_CAP,
};
use renewal_spectra::wiener::atom_average_estimate;
use renewal_spectra::LaplaceEvaluator;

fn cfg(n: usize, seed: u64) -> FkConfig {
    FkConfig { n_paths: n, seed, workers: 0, ess_floor: 0.1 }
}

fn fixtures() -> Vec<GSBModel> {
    vec![
        GSBModel::ssb(0.5, 1.0, 0.2, 12).unwrap(),
        GSBModel::ssb(1.0, 1.0, 0.2, 12).unwrap(),
        GSBModel::three_level(8).unwrap(),
    ]
}

#[test]
fn feynman_kac_matches_diagonalization_up_to_t8() {
    for (k, m) in fixtures().iter().enumerate() {
        let es = Eigensystem::new(m, DEFAULT_CAP).unwrap();
        for t in [1.0, 2.0, 4.0, 8.0] {
            let est = fk_mc_z(m, t, &cfg(40_000, 40 + k as u64)).unwrap();
            assert!(est.log_z.within(es.log_z(t), 3.5), "fixture {k}, T={t}: {:?} vs {}", est.log_z, es.log_z(t));
        }
    }
}

#[test]
fn decoupled_field_leaves_the_spin_ground_state() {
    let m = GSBModel::ssb(0.9, 1.3, 0.0, 3).unwrap();
    let g = exact_ground_report(&m, DEFAULT_CAP, 1e-8).unwrap();
    assert!((g.energy + 1.0).abs() < 1e-12);
    assert!((g.rho - 1.0).abs() < 1e-12);
    assert!(g.phi_number.abs() < 1e-20);
    // Z_T = e^{T}: the uniform vector is the ground state of -σ_x
    let est = fk_mc_z(&m, 3.0, &cfg(500, 1)).unwrap();
    assert!((est.log_z.value - 3.0).abs() < 1e-12);
}

#[test]
fn overlap_is_upper_semicontinuous_along_regularization() {
    let m = GSBModel::ssb(1.0, 0.5, 0.3, 16).unwrap();
    let rho0 = exact_ground_report(&m, DEFAULT_CAP, 1e-6).unwrap().rho;
    let mut rhos = Vec::new();
    for eps in [0.4, 0.2, 0.1, 0.05] {
        rhos.push(exact_ground_report(&m.regularized(eps).unwrap(), DEFAULT_CAP, 1e-6).unwrap().rho);
    }
    // ρ_ε decreases to ρ_0 as ε → 0, so the limsup never exceeds ρ_0
    assert!(rhos.windows(2).all(|p| p[1] <= p[0] + 1e-12), "{rhos:?}");
    let gaps: Vec<f64> = rhos.iter().map(|r| r - rho0).collect();
    assert!(gaps.iter().all(|&d| d >= -1e-6), "{rho0} vs {rhos:?}");
    assert!(gaps.windows(2).all(|p| p[1] < p[0]));
    assert!(gaps[3] < 0.5 * gaps[0]);
}

#[test]
fn heisenberg_dimer_runs_end_to_end() {
    use nalgebra::DMatrix;
    let sx = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
    let sz = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
    let sy_sy = DMatrix::from_row_slice(
        4,
        4,
        &[0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0],
    );
    let a = -(sx.kronecker(&sx) + sy_sy + sz.kronecker(&sz));
    let b = sz.kronecker(&DMatrix::identity(2, 2)) * 0.5;
    let spin = SpinSystem::new(&a, &b).unwrap();
    let m = GSBModel::new(spin, BosonField { modes: vec![Mode { omega: 1.0, nu: 0.3 }], n_max: 10 }).unwrap();
    let gen = build_generator(&m).unwrap();
    assert_eq!(gen.q, gen.q.transpose());
    let es = Eigensystem::new(&m, DEFAULT_CAP).unwrap();
    let est = fk_mc_z(&m, 2.0, &cfg(20_000, 3)).unwrap();
    assert!(est.log_z.within(es.log_z(2.0), 4.0));
}

#[test]
fn correlation_tables_match_exact_correlations() {
    let m = GSBModel::three_level(8).unwrap();
    let es = Eigensystem::new(&m, DEFAULT_CAP).unwrap();
    let t = 3.0;
    let grid = uniform_grid(t, 7);
    let est = fk_correlations(&m, t, &grid, &cfg(40_000, 8)).unwrap();
    let table = est.correlations.unwrap();
    let exact = es.correlations(t, &grid);
    let mut worst: f64 = 0.0;
    for ((v, se), x) in table.value.iter().zip(&table.se).zip(&exact) {
        worst = worst.max((v - x).abs() / se.max(1e-12));
    }
    assert!(worst < 4.5, "max z {worst}");
}

#[test]
fn upper_bound_approaches_boson_number() {
    let m = GSBModel::ssb(1.0, 1.0, 0.2, 12).unwrap();
    let es = Eigensystem::new(&m, DEFAULT_CAP).unwrap();
    let n = es.phi_number();
    let f8 = es.upper_functional(8.0);
    let f32 = es.upper_functional(32.0);
    assert!((f32 - n).abs() < (f8 - n).abs());
    let mc = upper_bound_mc(&m, 8.0, &cfg(20_000, 9)).unwrap();
    assert!(mc.functional.within(f8, 4.0));
}

#[test]
fn spectral_measure_feeds_the_average_estimator() {
    let m = GSBModel::three_level(8).unwrap();
    let es = Eigensystem::new(&m, DEFAULT_CAP).unwrap();
    let mu = es.spectral_measure().unwrap();
    assert!((mu.infimum_support() - es.e0).abs() < 1e-12);
    let ev = LaplaceEvaluator::new(mu);
    for t in [1.0, 5.0, 20.0] {
        assert!((ev.log_z(t) - es.log_z(t)).abs() < 1e-10);
    }
    assert!((atom_average_estimate(&ev, 400.0) - es.rho()).abs() < 5e-4);
}

#[test]
fn cap_is_enforced() {
    let m = GSBModel::three_level(8).unwrap();
    assert!(assemble_truncated(&m, 100).is_err());
}
