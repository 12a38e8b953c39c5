use copula_impute::em::{self, EmConfig};
use copula_impute::imputer;
use copula_impute::synthetic::{self, SyntheticSpec};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn bench_fit(c: &mut Criterion) {
    let mut group = c.benchmark_group("fit");
    group.sample_size(10);
    for &p in &[5usize, 15] {
        let sigma = synthetic::random_correlation(p, 7).unwrap();
        let spec = SyntheticSpec::benchmark(500, p, 0.3, 7);
        let (data, _) = synthetic::generate(&sigma, &spec).unwrap();
        let masked = synthetic::mask_mcar(&data, 0.3, 8).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(p), &masked, |b, masked| {
            b.iter(|| em::fit(masked, &EmConfig::default()).unwrap());
        });
    }
    group.finish();
}

fn bench_em_iteration(c: &mut Criterion) {
    // Per-iteration cost of the E-step/M-step cycle, the O(n p^3) core.
    let mut group = c.benchmark_group("em_iteration");
    group.sample_size(10);
    for &p in &[15usize, 30, 60] {
        let sigma = synthetic::random_correlation(p, 11).unwrap();
        let spec = SyntheticSpec::benchmark(1000, p, 0.25, 11);
        let (data, _) = synthetic::generate(&sigma, &spec).unwrap();
        let masked = synthetic::mask_mcar(&data, 0.25, 12).unwrap();
        let single = EmConfig {
            max_iter: 1,
            tol: 0.0,
            ..EmConfig::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(p), &masked, |b, masked| {
            b.iter(|| em::fit(masked, &single).unwrap());
        });
    }
    group.finish();
}

fn bench_impute(c: &mut Criterion) {
    let sigma = synthetic::random_correlation(15, 3).unwrap();
    let spec = SyntheticSpec::benchmark(1000, 15, 0.3, 3);
    let (data, _) = synthetic::generate(&sigma, &spec).unwrap();
    let masked = synthetic::mask_mcar(&data, 0.3, 4).unwrap();
    let fit = em::fit(&masked, &EmConfig::default()).unwrap();
    let mut group = c.benchmark_group("impute");
    group.sample_size(10);
    group.bench_function("single", |b| {
        b.iter(|| imputer::impute(&masked, &fit.model).unwrap());
    });
    group.bench_function("multiple_5", |b| {
        b.iter(|| imputer::impute_multiple(&masked, &fit.model, 5, 1).unwrap());
    });
    group.finish();
}

criterion_group!(benches, bench_fit, bench_em_iteration, bench_impute);
criterion_main!(benches);
