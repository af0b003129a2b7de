//! Closed-form limiting variances and covariance matrices.
//!
//! Every total variance is computed twice: once assembled from the level-one
//! and level-two components, once from the single combined display. The two
//! must agree; [`AsymptoticVariances::route_residual`] exposes the gap.

use crate::combinatorics::{rising_factorial, CoefficientSet, StirlingTable};
use crate::error::{require_positive, Error, Result};
use crate::numeric::{factorial_u128, gamma_int, inverse_power, CompensatedSum};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceModel {
    Hdp,
    Fdhdp,
    Groups,
}

impl VarianceModel {
    pub fn name(&self) -> &'static str {
        match self {
            VarianceModel::Hdp => "hdp",
            VarianceModel::Fdhdp => "fdhdp",
            VarianceModel::Groups => "groups",
        }
    }
}

/// Limiting variances of one model.
///
/// `level1` and `level2` are the variances of the level-one and level-two
/// contributions, `correction` the normalization term (`m²` for one group)
/// and `total = level1 + level2 − correction`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsymptoticVariances {
    pub model: VarianceModel,
    pub level1: f64,
    pub level2: f64,
    pub correction: f64,
    pub total: f64,
    /// The total evaluated from the combined display directly.
    pub direct_total: f64,
}

impl AsymptoticVariances {
    fn assemble(
        model: VarianceModel,
        level1: f64,
        level2: f64,
        correction: f64,
        direct_total: f64,
    ) -> Self {
        Self {
            model,
            level1,
            level2,
            correction,
            total: level1 + level2 - correction,
            direct_total,
        }
    }

    /// Relative gap between the assembled and the direct total.
    pub fn route_residual(&self) -> f64 {
        (self.total - self.direct_total).abs() / self.scale()
    }

    /// Magnitude used to make residuals relative.
    pub fn scale(&self) -> f64 {
        1f64.max(self.level1.abs() + self.level2.abs() + self.correction.abs())
    }
}

fn check_order(m: u32) -> Result<()> {
    if m < 2 {
        return Err(Error::Config(format!(
            "order m must be at least 2, got {m}"
        )));
    }
    Ok(())
}

/// The coefficient sums shared by the one-group and `L`-group variances:
/// `s` holds the order-`m` coefficients, `t` the order-`2m` ones.
fn gamma_family_variances(
    s: &[f64],
    t: &[f64],
    correction: f64,
    c: f64,
    model: VarianceModel,
) -> AsymptoticVariances {
    let mut denom = CompensatedSum::new();
    for (idx, &coef) in s.iter().enumerate() {
        denom.add(coef * gamma_int(idx as u32 + 1) * inverse_power(c, idx as u32));
    }
    let denom = denom.value();

    let mut paired = CompensatedSum::new();
    for (idx, &coef) in t.iter().enumerate() {
        paired.add(coef * gamma_int(idx as u32 + 1) * inverse_power(c, idx as u32));
    }
    let paired = paired.value();

    let mut level1 = CompensatedSum::new();
    let mut cross = CompensatedSum::new();
    let mut product = CompensatedSum::new();
    for (a, &si) in s.iter().enumerate() {
        for (b, &sj) in s.iter().enumerate() {
            let (i, j) = (a as u32 + 1, b as u32 + 1);
            let weight = si * sj * inverse_power(c, i + j - 1);
            let gamma_sum = factorial_u128(i + j - 1);
            let factorials = factorial_u128(i) * factorial_u128(j);
            // (i+j-1)! >= i! j! for i, j >= 1
            level1.add(weight * (gamma_sum - factorials) as f64);
            cross.add(weight * gamma_sum as f64);
            product.add(weight * factorials as f64);
        }
    }
    let d2 = denom * denom;
    let level1 = level1.value() / d2;
    let level2 = (paired - cross.value()) / d2;
    let direct = (paired - product.value()) / d2 - correction;
    AsymptoticVariances::assemble(model, level1, level2, correction, direct)
}

fn stirling_floats(table: &StirlingTable, n: u32) -> Result<Vec<f64>> {
    Ok(table.row(n as usize)?[1..]
        .iter()
        .map(|&v| v as f64)
        .collect())
}

/// Limiting variances of the scaled HDP homozygosity with `α/β → c`.
pub fn variance_hdp(m: u32, c: f64) -> Result<AsymptoticVariances> {
    variance_hdp_with(m, c, StirlingTable::shared())
}

pub fn variance_hdp_with(m: u32, c: f64, table: &StirlingTable) -> Result<AsymptoticVariances> {
    check_order(m)?;
    require_positive("c", c)?;
    let s = stirling_floats(table, m)?;
    let t = stirling_floats(table, 2 * m)?;
    Ok(gamma_family_variances(
        &s,
        &t,
        (m * m) as f64,
        c,
        VarianceModel::Hdp,
    ))
}

/// `σ_c²` at `m = 2` in closed form: `2 − 2(c² − c − 1) / (c (c+1)²)`.
pub fn variance_hdp_m2_closed(c: f64) -> f64 {
    2.0 - 2.0 * (c * c - c - 1.0) / (c * (c + 1.0).powi(2))
}

/// Limiting variances of the FDHDP with `α/β → c` and `α/n → d`.
pub fn variance_fdhdp(m: u32, c: f64, d: f64) -> Result<AsymptoticVariances> {
    variance_fdhdp_with(m, c, d, StirlingTable::shared())
}

pub fn variance_fdhdp_with(
    m: u32,
    c: f64,
    d: f64,
    table: &StirlingTable,
) -> Result<AsymptoticVariances> {
    check_order(m)?;
    require_positive("c", c)?;
    require_positive("d", d)?;
    let s = stirling_floats(table, m)?;
    let t = stirling_floats(table, 2 * m)?;
    let shifted = |k: u32| rising_factorial(d + 1.0, k);

    let mut denom = CompensatedSum::new();
    for (idx, &coef) in s.iter().enumerate() {
        let j = idx as u32;
        denom.add(coef * shifted(j) * inverse_power(c, j));
    }
    let denom = denom.value();
    let mut paired = CompensatedSum::new();
    for (idx, &coef) in t.iter().enumerate() {
        let j = idx as u32;
        paired.add(coef * shifted(j) * inverse_power(c, j));
    }
    let paired = paired.value();

    let mut level1 = CompensatedSum::new();
    let mut cross = CompensatedSum::new();
    let mut product = CompensatedSum::new();
    for (a, &si) in s.iter().enumerate() {
        for (b, &sj) in s.iter().enumerate() {
            let (i, j) = (a as u32 + 1, b as u32 + 1);
            let weight = si * sj * inverse_power(c, i + j - 1);
            let joint = shifted(i + j - 1);
            let split = shifted(i - 1) * shifted(j - 1) * ((i * j) as f64 + d);
            level1.add(weight * (joint - split));
            cross.add(weight * joint);
            product.add(weight * split);
        }
    }
    let d2 = denom * denom;
    let correction = (m * m) as f64;
    Ok(AsymptoticVariances::assemble(
        VarianceModel::Fdhdp,
        level1.value() / d2,
        (paired - cross.value()) / d2,
        correction,
        (paired - product.value()) / d2 - correction,
    ))
}

/// Limiting variances of the `L`-group homozygosity. `coeffs.c()` is the
/// limit ratio `c`.
pub fn variance_groups(coeffs: &CoefficientSet) -> Result<AsymptoticVariances> {
    let s: Vec<f64> = coeffs.totals().iter().map(|&v| v as f64).collect();
    let t: Vec<f64> = coeffs.pair_totals().iter().map(|&v| v as f64).collect();
    let correction = coeffs.share_weighted_parts().iter().map(|b| b * b).sum();
    Ok(gamma_family_variances(
        &s,
        &t,
        correction,
        coeffs.c(),
        VarianceModel::Groups,
    ))
}

/// Limiting covariance of the scaled one-level homozygosities of orders
/// `i` and `j`.
pub fn jkk_covariance(i: u32, j: u32) -> Result<f64> {
    if i < 2 || j < 2 {
        return Err(Error::Config(format!(
            "orders must be at least 2, got ({i}, {j})"
        )));
    }
    let numer = factorial_u128(i + j - 1) as f64 - (factorial_u128(i) * factorial_u128(j)) as f64;
    Ok(numer / (gamma_int(i) * gamma_int(j)))
}

/// Which of the covariance matrices a [`CovarianceMatrix`] holds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CovarianceKind {
    /// Joint moments `(Σ Y, Σ Y², ...)` of iid `Gamma(d, 1)` variables.
    GammaPowers { d: f64 },
    /// Scaled Dirichlet power sums of orders `2..=m`.
    DirichletPowers { d: f64, convention: SignConvention },
    /// Normalization term and level-two contribution.
    JointLevel2 { group: Option<usize> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    pub kind: CovarianceKind,
    pub entries: Vec<Vec<f64>>,
}

impl CovarianceMatrix {
    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i][j]
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let n = self.dim();
        (0..n).all(|i| (0..n).all(|j| (self.entries[i][j] - self.entries[j][i]).abs() <= tol))
    }
}

/// `Σ_ij = (d)_(i+j) − (d)_(i) (d)_(j)` for `1 <= i, j <= m`.
pub fn covariance_sigma_gamma(m: u32, d: f64) -> Result<CovarianceMatrix> {
    require_positive("d", d)?;
    if m == 0 {
        return Err(Error::Config("matrix order must be at least 1".into()));
    }
    let entries = (1..=m)
        .map(|i| {
            (1..=m)
                .map(|j| {
                    rising_factorial(d, i + j) - rising_factorial(d, i) * rising_factorial(d, j)
                })
                .collect()
        })
        .collect();
    Ok(CovarianceMatrix {
        kind: CovarianceKind::GammaPowers { d },
        entries,
    })
}

/// Sign inside the bracket `[(i+1)(j+1) ± d]` of the Dirichlet covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignConvention {
    Minus,
    Plus,
}

impl SignConvention {
    pub const ALL: [SignConvention; 2] = [SignConvention::Plus, SignConvention::Minus];

    pub fn sign(self) -> f64 {
        match self {
            SignConvention::Minus => -1.0,
            SignConvention::Plus => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SignConvention::Minus => "minus",
            SignConvention::Plus => "plus",
        }
    }
}

/// Limiting covariance of `(n^{j-1/2} Σ_k (W_k^j − E W_k^j))_{j=2..m}` for
/// `W ~ Dir(α/n, ...)` with `α/n → d`:
///
/// `Σ*_ij = [(d+1)_(i+j+1) − (d+1)_(i) (d+1)_(j) ((i+1)(j+1) ± d)] / d^(i+j+1)`
///
/// for `1 <= i, j <= m − 1`. The `Plus` convention is what the delta method
/// produces.
pub fn covariance_sigma_star(
    m: u32,
    d: f64,
    convention: SignConvention,
) -> Result<CovarianceMatrix> {
    check_order(m)?;
    require_positive("d", d)?;
    let sign = convention.sign();
    let entries = (1..m)
        .map(|i| {
            (1..m)
                .map(|j| {
                    let bracket = ((i + 1) * (j + 1)) as f64 + sign * d;
                    let numer = rising_factorial(d + 1.0, i + j + 1)
                        - rising_factorial(d + 1.0, i) * rising_factorial(d + 1.0, j) * bracket;
                    numer * inverse_power(d, i + j + 1)
                })
                .collect()
        })
        .collect();
    Ok(CovarianceMatrix {
        kind: CovarianceKind::DirichletPowers { d, convention },
        entries,
    })
}

/// `Σ*` by the delta method: `Jᵀ Σ J` with `Σ` from
/// [`covariance_sigma_gamma`] and `J` the gradient of
/// `x ↦ (x_j / x_1^j)_{j=2..m}` at the gamma moments.
pub fn covariance_sigma_star_delta(m: u32, d: f64) -> Result<CovarianceMatrix> {
    check_order(m)?;
    let sigma = covariance_sigma_gamma(m, d)?;
    let mu: Vec<f64> = (0..=m).map(|j| rising_factorial(d, j)).collect();
    // gradient[r][col]: derivative of output col (order col + 2) by input r (power r + 1)
    let outputs = (m - 1) as usize;
    let mut gradient = vec![vec![0.0; outputs]; m as usize];
    for col in 0..outputs {
        let p = col as i32 + 2;
        gradient[0][col] = -(p as f64) * mu[p as usize] / mu[1].powi(p + 1);
        gradient[p as usize - 1][col] = 1.0 / mu[1].powi(p);
    }
    let mut entries = vec![vec![0.0; outputs]; outputs];
    for (a, row) in entries.iter_mut().enumerate() {
        for (b, slot) in row.iter_mut().enumerate() {
            let mut acc = CompensatedSum::new();
            for r in 0..m as usize {
                for s in 0..m as usize {
                    acc.add(gradient[r][a] * sigma.entries[r][s] * gradient[s][b]);
                }
            }
            *slot = acc.value();
        }
    }
    Ok(CovarianceMatrix {
        kind: CovarianceKind::DirichletPowers {
            d,
            convention: SignConvention::Plus,
        },
        entries,
    })
}

/// The FDHDP level-one variance assembled from `Σ*`:
/// `Σ_{i,j>=2} [m i][m j] (d/c)^{i+j-1} Σ*_{i-1,j-1} / D_d²`.
pub fn level1_from_sigma_star(m: u32, c: f64, d: f64, convention: SignConvention) -> Result<f64> {
    let table = StirlingTable::shared();
    let s = stirling_floats(table, m)?;
    let sigma = covariance_sigma_star(m, d, convention)?;
    let mut denom = CompensatedSum::new();
    for (idx, &coef) in s.iter().enumerate() {
        denom.add(coef * rising_factorial(d + 1.0, idx as u32) * inverse_power(c, idx as u32));
    }
    let denom = denom.value();
    let mut acc = CompensatedSum::new();
    for i in 2..=m {
        for j in 2..=m {
            let weight = s[i as usize - 1] * s[j as usize - 1] * (d / c).powi((i + j - 1) as i32);
            acc.add(weight * sigma.entries[i as usize - 2][j as usize - 2]);
        }
    }
    Ok(acc.value() / (denom * denom))
}

/// `[[1, m], [m, σ₂²]]`: joint limit of the normalization term and the
/// level-two contribution.
pub fn covariance_joint_hdp(m: u32, c: f64) -> Result<CovarianceMatrix> {
    let v = variance_hdp(m, c)?;
    let m = m as f64;
    Ok(CovarianceMatrix {
        kind: CovarianceKind::JointLevel2 { group: None },
        entries: vec![vec![1.0, m], vec![m, v.level2]],
    })
}

/// `Σ^(k)` for group `k` (1-based) of the `L`-group model.
pub fn covariance_joint_groups(coeffs: &CoefficientSet, group: usize) -> Result<CovarianceMatrix> {
    if group == 0 || group > coeffs.groups() {
        return Err(Error::Config(format!(
            "group {group} outside 1..={}",
            coeffs.groups()
        )));
    }
    let v = variance_groups(coeffs)?;
    let off = coeffs.share_weighted_parts()[group - 1];
    Ok(CovarianceMatrix {
        kind: CovarianceKind::JointLevel2 { group: Some(group) },
        entries: vec![vec![1.0, off], vec![off, v.level2]],
    })
}

/// Bisection for a sign change of `f` on `[lo, hi]`.
pub fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> Result<f64> {
    let (mut flo, fhi) = (f(lo), f(hi));
    if flo.signum() == fhi.signum() {
        return Err(Error::Config(format!("no sign change on [{lo}, {hi}]")));
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let fmid = f(mid);
        if fmid == 0.0 {
            return Ok(mid);
        }
        if fmid.signum() == flo.signum() {
            lo = mid;
            flo = fmid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// The `c` at which the `m = 2` HDP variance equals the one-level value 2.
pub fn equal_variance_ratio() -> Result<f64> {
    bisect(|c| variance_hdp_m2_closed(c) - 2.0, 0.5, 5.0, 1e-13)
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOLDEN: f64 = 1.618_033_988_749_895;

    #[test]
    fn hdp_m2_at_unit_ratio() {
        let v = variance_hdp(2, 1.0).unwrap();
        assert!((v.level1 - 0.5).abs() < 1e-14);
        assert!((v.level2 - 6.0).abs() < 1e-14);
        assert!((v.total - 2.5).abs() < 1e-14);
        assert!((v.direct_total - 2.5).abs() < 1e-14);
        assert_eq!(v.correction, 4.0);
    }

    #[test]
    fn hdp_m2_matches_closed_form() {
        for k in 0..50 {
            let c = 10f64.powf(-3.0 + 6.0 * k as f64 / 49.0);
            let general = variance_hdp(2, c).unwrap().total;
            let closed = variance_hdp_m2_closed(c);
            assert!(
                (general - closed).abs() <= 1e-12 * closed.abs().max(1.0),
                "c = {c}"
            );
        }
        assert!((variance_hdp_m2_closed(1.0) - 2.5).abs() < 1e-15);
        assert!((variance_hdp_m2_closed(GOLDEN) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn hdp_large_ratio_limit() {
        let v = variance_hdp(2, 1e8).unwrap();
        assert!((v.total - 2.0).abs() < 1e-6);
        assert!(variance_hdp(2, 1e6).unwrap().level1 < 1e-5);
    }

    #[test]
    fn golden_root() {
        assert!((equal_variance_ratio().unwrap() - GOLDEN).abs() < 1e-9);
        assert!(bisect(|x| x * x + 1.0, 0.0, 1.0, 1e-9).is_err());
    }

    #[test]
    fn fdhdp_small_d_recovers_hdp() {
        for m in 2..=5 {
            for &c in &[0.3, 1.0, 4.0] {
                let f = variance_fdhdp(m, c, 1e-8).unwrap();
                let h = variance_hdp(m, c).unwrap();
                assert!((f.total - h.total).abs() < 1e-5 * h.total.abs().max(1.0));
            }
        }
    }

    #[test]
    fn fdhdp_decomposition() {
        let v = variance_fdhdp(3, 0.5, 2.0).unwrap();
        assert!((v.total - (v.level1 + v.level2 - 9.0)).abs() < 1e-12 * v.scale());
        assert!(v.route_residual() < 1e-12);
    }

    #[test]
    fn jkk_examples() {
        assert_eq!(jkk_covariance(2, 2).unwrap(), 2.0);
        assert_eq!(jkk_covariance(2, 3).unwrap(), 6.0);
        assert_eq!(jkk_covariance(3, 2).unwrap(), 6.0);
        for i in 2..=10 {
            assert!(jkk_covariance(i, i).unwrap() > 0.0);
        }
        assert!(jkk_covariance(1, 2).is_err());
    }

    #[test]
    fn sigma_gamma_entries() {
        let s = covariance_sigma_gamma(4, 0.7).unwrap();
        assert!((s.get(0, 0) - 0.7).abs() < 1e-15);
        assert!(s.is_symmetric(0.0));
    }

    #[test]
    fn sigma_star_plus_matches_delta_method() {
        for &d in &[0.2, 1.0, 3.5] {
            let closed = covariance_sigma_star(5, d, SignConvention::Plus).unwrap();
            let delta = covariance_sigma_star_delta(5, d).unwrap();
            for i in 0..4 {
                for j in 0..4 {
                    let (a, b) = (closed.get(i, j), delta.get(i, j));
                    assert!(
                        (a - b).abs() <= 1e-9 * a.abs().max(1.0),
                        "d={d} ({i},{j}): {a} vs {b}"
                    );
                }
            }
        }
    }

    #[test]
    fn sigma_star_conventions_are_symmetric_and_differ() {
        for conv in SignConvention::ALL {
            assert!(covariance_sigma_star(4, 1.3, conv)
                .unwrap()
                .is_symmetric(1e-12));
        }
        let plus = covariance_sigma_star(3, 1.0, SignConvention::Plus).unwrap();
        let minus = covariance_sigma_star(3, 1.0, SignConvention::Minus).unwrap();
        assert!((plus.get(0, 0) - 4.0).abs() < 1e-12);
        assert!((minus.get(0, 0) - 12.0).abs() < 1e-12);
    }

    #[test]
    fn level1_cross_check_selects_plus() {
        for &(m, c, d) in &[(2, 1.0, 1.0), (3, 0.5, 2.0), (4, 2.0, 0.3)] {
            let target = variance_fdhdp(m, c, d).unwrap().level1;
            let plus = level1_from_sigma_star(m, c, d, SignConvention::Plus).unwrap();
            let minus = level1_from_sigma_star(m, c, d, SignConvention::Minus).unwrap();
            assert!((plus - target).abs() <= 1e-12 * target.abs().max(1.0));
            assert!((minus - target).abs() > 1e-3);
        }
    }

    #[test]
    fn joint_hdp_matrix() {
        let s = covariance_joint_hdp(2, 1.0).unwrap();
        assert_eq!(s.get(0, 1), 2.0);
        assert!((s.get(1, 1) - 6.0).abs() < 1e-14);
        let coeffs = CoefficientSet::new(3, 1, 1.0, StirlingTable::shared()).unwrap();
        let g = covariance_joint_groups(&coeffs, 1).unwrap();
        assert!((g.get(0, 1) - 3.0).abs() < 1e-15);
        assert!(covariance_joint_groups(&coeffs, 2).is_err());
    }

    #[test]
    fn groups_single_group_equals_hdp() {
        let table = StirlingTable::shared();
        for m in 2..=6 {
            for &c in &[0.1, 1.0, 10.0] {
                let g = variance_groups(&CoefficientSet::new(m, 1, c, table).unwrap()).unwrap();
                let h = variance_hdp(m, c).unwrap();
                for (a, b) in [
                    (g.level1, h.level1),
                    (g.level2, h.level2),
                    (g.correction, h.correction),
                    (g.total, h.total),
                ] {
                    assert!((a - b).abs() <= 1e-12 * h.scale());
                }
            }
        }
    }

    #[test]
    fn invalid_arguments() {
        assert!(variance_hdp(1, 1.0).is_err());
        assert!(variance_hdp(2, 0.0).is_err());
        assert!(variance_fdhdp(2, 1.0, -1.0).is_err());
        assert!(covariance_sigma_star(1, 1.0, SignConvention::Plus).is_err());
        assert!(covariance_sigma_gamma(0, 1.0).is_err());
    }
}
