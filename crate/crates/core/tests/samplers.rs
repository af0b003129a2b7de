use hdphom::combinatorics::{rising_factorial, CoefficientSet, StirlingTable};
use hdphom::montecarlo::accumulate_in_order;
use hdphom::sampling::{
    sample_fdhdp, sample_gem, sample_hdp, sample_hdp_groups, ReplicateStreams, RngStream, Role,
    DEFAULT_EPS,
};
use hdphom::statistics::{
    exact_mean_fdhdp, exact_mean_groups, group_homozygosity, power_sum, GroupWeighting,
};
use rand::Rng;
use rand_distr::{Beta, Distribution};
use rayon::prelude::*;

fn mc<F: Fn(u64) -> f64 + Sync + Send>(replicates: u64, f: F) -> (f64, f64) {
    let values: Vec<f64> = (0..replicates).into_par_iter().map(f).collect();
    let acc = accumulate_in_order(&values);
    (acc.mean(), acc.se_mean())
}

fn two_sample_ks(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_unstable_by(f64::total_cmp);
    b.sort_unstable_by(f64::total_cmp);
    let (mut i, mut j, mut sup) = (0usize, 0usize, 0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        sup = sup.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    sup
}

#[test]
fn weights_close_the_simplex_on_grid() {
    for &alpha in &[0.5, 5.0, 50.0] {
        for &beta in &[0.5, 5.0, 50.0] {
            for r in 0..20 {
                let streams = ReplicateStreams::new(7, r);
                let w = sample_hdp(alpha, beta, DEFAULT_EPS, &streams).unwrap();
                assert!(w.weights.iter().all(|&x| x >= 0.0));
                assert!(
                    (w.total_mass() - 1.0).abs() < 1e-12,
                    "alpha={alpha} beta={beta}"
                );
                assert!(w.tail_mass <= DEFAULT_EPS);
                let family = sample_hdp_groups(alpha, beta, 3, DEFAULT_EPS, &streams).unwrap();
                for g in &family.groups {
                    assert!((g.total_mass() - 1.0).abs() < 1e-12);
                    assert_eq!(g.len(), family.base.len());
                }
                let f = sample_fdhdp(alpha, beta, 25, &streams).unwrap();
                assert_eq!(f.len(), 25);
                assert!((f.total_mass() - 1.0).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn gem_power_sum_means_match_closed_form() {
    let alpha = 3.0;
    for j in 2..=4u32 {
        // E Σ V_i^j = Γ(j) / (α+1)_(j-1)
        let expected =
            (1..j).map(|x| x as f64).product::<f64>() / rising_factorial(alpha + 1.0, j - 1);
        let (mean, se) = mc(40_000, |r| {
            let mut stream = RngStream::new(11, r);
            let w = sample_gem(alpha, DEFAULT_EPS, &mut stream).unwrap();
            power_sum(&w, j).value
        });
        assert!(
            (mean - expected).abs() <= 4.0 * se,
            "j={j}: {mean} vs {expected} (se {se})"
        );
    }
}

#[test]
fn gamma_ratio_first_weight_matches_conditional_beta_construction() {
    let (alpha, beta) = (2.0, 3.0);
    let n = 20_000;
    let gamma_ratio: Vec<f64> = (0..n as u64)
        .into_par_iter()
        .map(|r| {
            sample_hdp(alpha, beta, DEFAULT_EPS, &ReplicateStreams::new(31, r))
                .unwrap()
                .weights[0]
        })
        .collect();
    let stick_breaking: Vec<f64> = (0..n as u64)
        .into_par_iter()
        .map(|r| {
            let mut stream = RngStream::new(32, r);
            let v1 = Beta::new(1.0, alpha).unwrap().sample(stream.rng());
            Beta::new(beta * v1, beta * (1.0 - v1))
                .unwrap()
                .sample(stream.rng())
        })
        .collect();
    let d = two_sample_ks(gamma_ratio, stick_breaking);
    let bound = 1.95 * (2.0 / n as f64).sqrt();
    assert!(d < bound, "two-sample KS {d} >= {bound}");
}

#[test]
fn fdhdp_mean_matches_exact() {
    let (alpha, beta, n) = (4.0, 4.0, 4);
    let expected = exact_mean_fdhdp(alpha, beta, n, 2).unwrap();
    let (mean, se) = mc(100_000, |r| {
        power_sum(
            &sample_fdhdp(alpha, beta, n, &ReplicateStreams::new(41, r)).unwrap(),
            2,
        )
        .value
    });
    assert!(
        (mean - expected).abs() <= 4.0 * se,
        "{mean} vs {expected} (se {se})"
    );
}

#[test]
fn groups_mean_matches_exact() {
    let (alpha, beta) = (5.0, 5.0);
    let coeffs = CoefficientSet::new(2, 2, alpha / beta, StirlingTable::shared()).unwrap();
    let expected = exact_mean_groups(alpha, beta, &coeffs).unwrap();
    let (mean, se) = mc(100_000, |r| {
        let family =
            sample_hdp_groups(alpha, beta, 2, DEFAULT_EPS, &ReplicateStreams::new(51, r)).unwrap();
        group_homozygosity(&family, 2, GroupWeighting::Plain)
            .unwrap()
            .value
    });
    assert!(
        (mean - expected).abs() <= 4.0 * se,
        "{mean} vs {expected} (se {se})"
    );
}

#[test]
fn streams_depend_only_on_seed_replicate_and_role() {
    let a = ReplicateStreams::new(5, 9);
    let b = ReplicateStreams::new(5, 9);
    let draw = |s: &ReplicateStreams, role| s.stream(role).rng().random::<u64>();
    assert_eq!(draw(&a, Role::Level1), draw(&b, Role::Level1));
    assert_ne!(draw(&a, Role::Level1), draw(&a, Role::Group(1)));
    assert_ne!(
        draw(&a, Role::Level1),
        draw(&ReplicateStreams::new(5, 10), Role::Level1)
    );
    assert_ne!(
        draw(&a, Role::Level1),
        draw(&ReplicateStreams::new(6, 9), Role::Level1)
    );
}
