use renewal_spectra::measure::fixtures::{atom_plus_uniform, two_atom};
use renewal_spectra::renewal::{
    atom_via_renewal, build_renewal_transform, classify_singularity, inverse_moment_via_renewal, sample_paths,
    ClassifyThresholds, GridConfig, SimConfig, SingularityClass,
};
use renewal_spectra::{LaplaceEvaluator, ProbabilityMeasure};

fn sim(horizon: f64, n: usize, seed: u64, workers: usize) -> SimConfig {
    SimConfig { horizon, n_paths: n, seed, workers, ..SimConfig::default() }
}

#[test]
fn pipeline_is_translation_invariant() {
    let mu = atom_plus_uniform(0.3, 1.0, 2.0);
    let a = LaplaceEvaluator::new(mu.clone());
    let b = LaplaceEvaluator::new(mu.translate(-2.5));
    let ta = build_renewal_transform(&a, &GridConfig::default()).unwrap();
    let tb = build_renewal_transform(&b, &GridConfig::default()).unwrap();
    assert!((ta.beta - tb.beta).abs() < 1e-10);
    for (x, y) in ta.q.iter().zip(&tb.q) {
        assert!((x - y).abs() <= 1e-8 * x.abs().max(1e-12));
    }
    let sa = sample_paths(&ta, &sim(20.0, 4000, 5, 0)).unwrap().stats;
    let sb = sample_paths(&tb, &sim(20.0, 4000, 5, 0)).unwrap().stats;
    assert!((sa.a1.value - sb.a1.value).abs() < 1e-6 * sa.a1.value);
    assert_eq!(sa.p_t1_censored.value, sb.p_t1_censored.value);
}

#[test]
fn runs_are_independent_of_worker_count() {
    let ev = LaplaceEvaluator::new(two_atom(0.4, 1.5));
    let tr = build_renewal_transform(&ev, &GridConfig::default()).unwrap();
    let one = sample_paths(&tr, &sim(25.0, 3000, 11, 1)).unwrap();
    let many = sample_paths(&tr, &sim(25.0, 3000, 11, 3)).unwrap();
    assert_eq!(one.first_cycles, many.first_cycles);
    assert_eq!(serde_json::to_string(&one.stats).unwrap(), serde_json::to_string(&many.stats).unwrap());
    let other = sample_paths(&tr, &sim(25.0, 3000, 12, 1)).unwrap();
    assert_ne!(one.first_cycles, other.first_cycles);
}

#[test]
fn cycle_statistics_recover_atom_and_inverse_moment() {
    let mu = atom_plus_uniform(0.5, 1.0, 2.0);
    let want = mu.inverse_moment_oracle().unwrap().value();
    let ev = LaplaceEvaluator::new(mu);
    let tr = build_renewal_transform(&ev, &GridConfig::default()).unwrap();
    let stats = sample_paths(&tr, &sim(60.0, 40_000, 2, 0)).unwrap().stats;
    let rho = atom_via_renewal(&stats);
    assert!(rho.within(0.5, 4.0), "{rho:?}");
    let im = inverse_moment_via_renewal(&stats, 0.05);
    assert!(im.stable);
    assert!(im.estimate.within(want, 4.0), "{:?} vs {want}", im.estimate);
}

#[test]
fn classification_separates_atom_from_no_atom() {
    let th = ClassifyThresholds::default();
    let run = |mu: ProbabilityMeasure, t: f64| {
        let ev = LaplaceEvaluator::new(mu);
        let tr = build_renewal_transform(&ev, &GridConfig::default()).unwrap();
        let a = sample_paths(&tr, &sim(t, 4000, 3, 0)).unwrap().stats;
        let b = sample_paths(&tr, &sim(2.0 * t, 4000, 3, 0)).unwrap().stats;
        classify_singularity(&a, &b, &th).class
    };
    assert_eq!(run(ProbabilityMeasure::dirac(1.0), 10.0), SingularityClass::AtomFull);
    assert_eq!(run(two_atom(0.5, 1.0), 40.0), SingularityClass::AtomPartial);
}
