use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use renewal_spectra::rankone::{spectral, RankOneModel};
use renewal_spectra::spinboson::{Eigensystem, GSBModel, DEFAULT_CAP};
use renewal_spectra::wiener::{atom_average_estimate, inverse_moment_estimate};
use renewal_spectra::LaplaceEvaluator;
use renewal_spectra_bench::measures;

fn log_z(c: &mut Criterion) {
    let mut g = c.benchmark_group("log_z");
    for (name, mu) in measures() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &mu, |b, mu| {
            let mut t = 1.0;
            b.iter(|| {
                // fresh evaluator and a moving t keep the cache out of the picture
                let ev = LaplaceEvaluator::new(mu.clone());
                t += 1e-3;
                black_box(ev.log_z(black_box(t)))
            })
        });
    }
    g.finish();
}

fn averaged(c: &mut Criterion) {
    let mut g = c.benchmark_group("atom_average_estimate");
    for (name, mu) in measures() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &mu, |b, mu| {
            b.iter(|| {
                let ev = LaplaceEvaluator::new(mu.clone());
                black_box(atom_average_estimate(&ev, black_box(100.0)))
            })
        });
    }
    g.finish();
}

fn inverse_moment(c: &mut Criterion) {
    let mut g = c.benchmark_group("inverse_moment_estimate");
    g.sample_size(20);
    for (name, mu) in measures().into_iter().take(2) {
        g.bench_with_input(BenchmarkId::from_parameter(name), &mu, |b, mu| {
            b.iter(|| {
                let ev = LaplaceEvaluator::new(mu.clone());
                black_box(inverse_moment_estimate(&ev, 100.0, 512).map(|r| r.value))
            })
        });
    }
    g.finish();
}

fn eigensolves(c: &mut Criterion) {
    let mut g = c.benchmark_group("eigensolve");
    g.sample_size(20);
    let model = RankOneModel::random(64, 1);
    g.bench_function("rankone-64", |b| b.iter(|| black_box(spectral(&model, black_box(-0.7)).e_alpha)));
    let ssb = GSBModel::ssb(1.0, 1.0, 0.2, 12).unwrap();
    g.bench_function("ssb-n12", |b| b.iter(|| black_box(Eigensystem::new(&ssb, DEFAULT_CAP).unwrap().e0)));
    let three = GSBModel::three_level(8).unwrap();
    g.bench_function("three-level-n8", |b| b.iter(|| black_box(Eigensystem::new(&three, DEFAULT_CAP).unwrap().e0)));
    g.finish();
}

criterion_group!(benches, log_z, averaged, inverse_moment, eigensolves);
criterion_main!(benches);
