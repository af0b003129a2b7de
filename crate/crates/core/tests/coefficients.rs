use hdphom::asymptotics::{variance_groups, variance_hdp};
use hdphom::combinatorics::{CoefficientSet, StirlingTable};

/// `[n k]` by counting the cycles of every permutation of `n` elements.
fn stirling_by_permutations(n: usize) -> Vec<u128> {
    let mut counts = vec![0u128; n + 1];
    let mut perm: Vec<usize> = (0..n).collect();
    loop {
        let mut seen = vec![false; n];
        let mut cycles = 0;
        for start in 0..n {
            if !seen[start] {
                cycles += 1;
                let mut i = start;
                while !seen[i] {
                    seen[i] = true;
                    i = perm[i];
                }
            }
        }
        counts[cycles] += 1;
        // next lexicographic permutation
        let Some(i) = (0..n.saturating_sub(1))
            .rev()
            .find(|&i| perm[i] < perm[i + 1])
        else {
            break;
        };
        let j = (i + 1..n).rev().find(|&j| perm[j] > perm[i]).unwrap();
        perm.swap(i, j);
        perm[i + 1..].reverse();
    }
    counts
}

fn all_compositions(total: u32, groups: usize) -> Vec<Vec<u32>> {
    if groups == 1 {
        return vec![vec![total]];
    }
    let mut out = Vec::new();
    for first in 0..=total {
        for mut rest in all_compositions(total - first, groups - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

struct Oracle {
    stirling: Vec<Vec<u128>>,
}

impl Oracle {
    /// Rows from expanding `x (x+1) ... (x+n-1)` term by term.
    fn new(max_n: usize) -> Self {
        let mut stirling = vec![vec![1u128]];
        for n in 1..=max_n {
            let prev = &stirling[n - 1];
            let mut row = vec![0u128; n + 1];
            for (k, &coef) in prev.iter().enumerate() {
                row[k + 1] += coef;
                row[k] += coef * (n as u128 - 1);
            }
            stirling.push(row);
        }
        Self { stirling }
    }

    fn s(&self, n: u32, k: u32) -> u128 {
        self.stirling[n as usize]
            .get(k as usize)
            .copied()
            .unwrap_or(0)
    }

    /// `a_j(parts)` as a sum over ways of splitting `j` cycles among groups.
    fn a(&self, parts: &[u32], j: u32) -> u128 {
        all_compositions(j, parts.len())
            .iter()
            .map(|split| {
                parts
                    .iter()
                    .zip(split)
                    .map(|(&mk, &jk)| self.s(mk, jk))
                    .product::<u128>()
            })
            .sum()
    }
}

fn gamma_sum(coeff: impl Fn(u32) -> f64, top: u32, c: f64) -> f64 {
    (1..=top)
        .map(|j| coeff(j) * (1..j).map(|x| x as f64).product::<f64>() / c.powi(j as i32 - 1))
        .sum()
}

#[test]
fn stirling_table_matches_permutation_count() {
    let table = StirlingTable::shared();
    let expanded = Oracle::new(8);
    for n in 0..=8 {
        let brute = stirling_by_permutations(n);
        assert_eq!(table.row(n).unwrap(), &brute[..], "n = {n}");
        assert_eq!(expanded.stirling[n], brute, "n = {n}");
    }
}

#[test]
fn coefficient_system_matches_brute_force() {
    let oracle = Oracle::new(12);
    for m in 2..=6u32 {
        for groups in 1..=4usize {
            let set = CoefficientSet::new(m, groups, 0.7, StirlingTable::shared()).unwrap();
            let comps = all_compositions(m, groups);
            assert_eq!(set.compositions().len(), comps.len());
            for (idx, comp) in set.compositions().iter().enumerate() {
                for j in 1..=m {
                    assert_eq!(
                        set.a(idx)[j as usize - 1],
                        oracle.a(comp.parts(), j),
                        "m={m} L={groups} {comp:?} j={j}"
                    );
                }
            }
            for j in 1..=m {
                let brute: u128 = comps.iter().map(|p| oracle.a(p, j)).sum();
                assert_eq!(
                    set.totals()[j as usize - 1],
                    brute,
                    "A_{j} m={m} L={groups}"
                );
            }
            for j in 1..=2 * m {
                let mut brute = 0u128;
                for first in &comps {
                    for second in &comps {
                        let joint: Vec<u32> =
                            first.iter().zip(second).map(|(a, b)| a + b).collect();
                        brute += oracle.a(&joint, j);
                    }
                }
                assert_eq!(
                    set.pair_totals()[j as usize - 1],
                    brute,
                    "pair j={j} m={m} L={groups}"
                );
            }
        }
    }
}

#[test]
fn shares_sum_to_one_and_match_brute_force() {
    let oracle = Oracle::new(6);
    for m in 2..=5u32 {
        for groups in 1..=3usize {
            for &c in &[0.1, 1.0, 10.0] {
                let set = CoefficientSet::new(m, groups, c, StirlingTable::shared()).unwrap();
                let total: f64 = set.shares().iter().sum();
                assert!(
                    (total - 1.0).abs() < 1e-12,
                    "m={m} L={groups} c={c}: {total}"
                );
                let denom = gamma_sum(
                    |j| {
                        all_compositions(m, groups)
                            .iter()
                            .map(|p| oracle.a(p, j) as f64)
                            .sum()
                    },
                    m,
                    c,
                );
                for (comp, &share) in set.compositions().iter().zip(set.shares()) {
                    let brute = gamma_sum(|j| oracle.a(comp.parts(), j) as f64, m, c) / denom;
                    assert!((share - brute).abs() < 1e-12, "{comp:?}");
                }
            }
        }
    }
}

/// Direct display of the L-group total variance from brute-force coefficients.
fn groups_total_by_brute_force(m: u32, groups: usize, c: f64) -> f64 {
    let oracle = Oracle::new(2 * m as usize);
    let comps = all_compositions(m, groups);
    let big_a = |j: u32| comps.iter().map(|p| oracle.a(p, j) as f64).sum::<f64>();
    let pair = |j: u32| {
        let mut acc = 0.0;
        for first in &comps {
            for second in &comps {
                let joint: Vec<u32> = first.iter().zip(second).map(|(a, b)| a + b).collect();
                acc += oracle.a(&joint, j) as f64;
            }
        }
        acc
    };
    let fact = |n: u32| (1..=n).map(|x| x as f64).product::<f64>();
    let denom = gamma_sum(big_a, m, c);
    let paired = gamma_sum(pair, 2 * m, c);
    let mut product = 0.0;
    for i in 1..=m {
        for j in 1..=m {
            product += big_a(i) * big_a(j) * fact(i) * fact(j) / c.powi((i + j - 1) as i32);
        }
    }
    let mut correction = 0.0;
    for k in 0..groups {
        let weighted: f64 = comps
            .iter()
            .map(|p| gamma_sum(|j| oracle.a(p, j) as f64, m, c) / denom * p[k] as f64)
            .sum();
        correction += weighted * weighted;
    }
    (paired - product) / (denom * denom) - correction
}

#[test]
fn groups_variance_matches_brute_force() {
    for &(m, groups) in &[(2u32, 2usize), (2, 3), (3, 2)] {
        for &c in &[0.25, 1.0, 4.0] {
            let set = CoefficientSet::new(m, groups, c, StirlingTable::shared()).unwrap();
            let v = variance_groups(&set).unwrap();
            let brute = groups_total_by_brute_force(m, groups, c);
            assert!(
                (v.total - brute).abs() < 1e-10 * brute.abs().max(1.0),
                "m={m} L={groups} c={c}: {} vs {brute}",
                v.total
            );
        }
    }
}

#[test]
fn one_group_reduces_to_hdp_componentwise() {
    for m in 2..=6 {
        for &c in &[0.3, 1.0, 7.0] {
            let g =
                variance_groups(&CoefficientSet::new(m, 1, c, StirlingTable::shared()).unwrap())
                    .unwrap();
            let h = variance_hdp(m, c).unwrap();
            for (a, b) in [
                (g.level1, h.level1),
                (g.level2, h.level2),
                (g.correction, h.correction),
                (g.total, h.total),
            ] {
                assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "m={m} c={c}");
            }
        }
    }
}
