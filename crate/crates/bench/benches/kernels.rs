use criterion::{criterion_group, criterion_main, Criterion};
use hdphom::combinatorics::{CoefficientSet, StirlingTable, MAX_STIRLING_N};
use hdphom::sampling::{sample_hdp, ReplicateStreams, DEFAULT_EPS};
use hdphom::statistics::power_sum;
use hdphom::{variance_groups, variance_hdp};
use std::hint::black_box;

fn combinatorics(c: &mut Criterion) {
    c.bench_function("stirling_table_full", |b| {
        b.iter(|| StirlingTable::new(black_box(MAX_STIRLING_N)).unwrap())
    });
    c.bench_function("coefficients_m6_l3", |b| {
        b.iter(|| CoefficientSet::new(black_box(6), 3, 1.5, StirlingTable::shared()).unwrap())
    });
}

fn sampling(c: &mut Criterion) {
    let mut r = 0;
    c.bench_function("sample_hdp_a50_b50", |b| {
        b.iter(|| {
            r += 1;
            sample_hdp(50.0, 50.0, DEFAULT_EPS, &ReplicateStreams::new(1, r)).unwrap()
        })
    });
    let w = sample_hdp(50.0, 50.0, DEFAULT_EPS, &ReplicateStreams::new(1, 0)).unwrap();
    c.bench_function("power_sum_m3", |b| b.iter(|| power_sum(black_box(&w), 3)));
}

fn asymptotics(c: &mut Criterion) {
    c.bench_function("variance_hdp_m8", |b| {
        b.iter(|| variance_hdp(black_box(8), 2.0).unwrap())
    });
    let coeffs = CoefficientSet::new(5, 3, 2.0, StirlingTable::shared()).unwrap();
    c.bench_function("variance_groups_m5_l3", |b| {
        b.iter(|| variance_groups(black_box(&coeffs)).unwrap())
    });
}

criterion_group!(kernels, combinatorics, sampling, asymptotics);
criterion_main!(kernels);
