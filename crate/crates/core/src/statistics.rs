//! Power-sum homozygosities of sampled weights, their exact means, and the
//! centered and scaled statistics used by the central limit theorems.

use crate::combinatorics::{
    compositions, gamma_weighted_sum, rising_factorial, CoefficientSet, Composition, StirlingTable,
};
use crate::error::{require_positive, Error, Result};
use crate::numeric::{compensated_sum, factorial_u128, gamma_int, CompensatedSum};
use crate::sampling::{GroupFamily, WeightVector};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};

/// A homozygosity of order `m` with its certified truncation bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomozygosityValue {
    pub order: u32,
    pub value: f64,
    pub tail_bound: f64,
}

/// Which model a statistic belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelSpec {
    Hdp,
    Fdhdp { n: usize },
    Groups { groups: usize },
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Hdp => "hdp",
            ModelSpec::Fdhdp { .. } => "fdhdp",
            ModelSpec::Groups { .. } => "groups",
        }
    }
}

/// How the `L` groups are combined per atom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GroupWeighting {
    /// `Σ_{𝐦 ∈ M_{m,L}} ∏_k Z_k^{m_k} / L^m`, the complete homogeneous
    /// polynomial of degree `m` scaled by `L^-m`.
    #[default]
    Plain,
    /// Same sum with multinomial weights, i.e. `(Σ_k Z_k / L)^m`.
    Multinomial,
}

/// Model together with `α`, `β` and the order `m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub model: ModelSpec,
    pub alpha: f64,
    pub beta: f64,
    pub m: u32,
}

impl ModelParams {
    pub fn new(model: ModelSpec, alpha: f64, beta: f64, m: u32) -> Result<Self> {
        require_positive("alpha", alpha)?;
        require_positive("beta", beta)?;
        if m < 2 {
            return Err(Error::Config(format!(
                "order m must be at least 2, got {m}"
            )));
        }
        match model {
            ModelSpec::Fdhdp { n: 0 } => {
                return Err(Error::Config("FDHDP dimension n must be at least 1".into()))
            }
            ModelSpec::Groups { groups: 0 } => {
                return Err(Error::Config("group count L must be at least 1".into()))
            }
            _ => {}
        }
        Ok(Self {
            model,
            alpha,
            beta,
            m,
        })
    }

    /// `c = α / β`.
    pub fn c(&self) -> f64 {
        self.alpha / self.beta
    }

    /// `d = α / n` for the finite-dimensional model.
    pub fn d(&self) -> Option<f64> {
        match self.model {
            ModelSpec::Fdhdp { n } => Some(self.alpha / n as f64),
            _ => None,
        }
    }
}

/// `Σ_i w_i^m`, accumulated from the largest term down with compensation.
pub fn power_sum(w: &WeightVector, m: u32) -> HomozygosityValue {
    let mut terms: Vec<f64> = w.weights.iter().map(|x| x.powi(m as i32)).collect();
    terms.sort_unstable_by(|a, b| b.total_cmp(a));
    HomozygosityValue {
        order: m,
        value: compensated_sum(terms),
        tail_bound: w.tail_mass,
    }
}

/// Complete homogeneous symmetric polynomial `h_m(x_1, ..., x_L)`.
pub fn complete_homogeneous(xs: &[f64], m: u32) -> f64 {
    // h[d] holds h_d of the variables seen so far.
    let mut h = vec![0.0; m as usize + 1];
    h[0] = 1.0;
    for &x in xs {
        for d in 1..=m as usize {
            h[d] += x * h[d - 1];
        }
    }
    h[m as usize]
}

/// Homozygosity of `L` groups sharing atoms.
pub fn group_homozygosity(
    family: &GroupFamily,
    m: u32,
    weighting: GroupWeighting,
) -> Result<HomozygosityValue> {
    let groups = family.groups.len();
    if groups == 0 {
        return Err(Error::Config("group family is empty".into()));
    }
    let atoms = family.groups[0].len();
    if family.groups.iter().any(|g| g.len() != atoms) {
        return Err(Error::ParameterMismatch(
            "groups are truncated at different indices".into(),
        ));
    }
    let scale = (groups as f64).powi(-(m as i32));
    let mut column = vec![0.0; groups];
    let mut terms = Vec::with_capacity(atoms);
    for i in 0..atoms {
        for (slot, g) in column.iter_mut().zip(&family.groups) {
            *slot = g.weights[i];
        }
        let term = match weighting {
            GroupWeighting::Plain => complete_homogeneous(&column, m) * scale,
            GroupWeighting::Multinomial => {
                (column.iter().sum::<f64>() / groups as f64).powi(m as i32)
            }
        };
        terms.push(term);
    }
    terms.sort_unstable_by(|a, b| b.total_cmp(a));
    let tail_bound = family
        .groups
        .iter()
        .map(|g| g.tail_mass)
        .fold(0.0, f64::max);
    Ok(HomozygosityValue {
        order: m,
        value: compensated_sum(terms),
        tail_bound,
    })
}

/// `β^j / ∏_k (β)_(m_k)` without forming either side, for `Σ m_k = m`.
fn beta_power_ratio(beta: f64, j: u32, parts: &[u32]) -> f64 {
    let m: u32 = parts.iter().sum();
    let mut ratio = beta.powi(j as i32 - m as i32);
    for &mk in parts {
        for i in 0..mk {
            ratio *= beta / (beta + i as f64);
        }
    }
    ratio
}

/// `E(Z_k^m)` for the `k`-th HDP weight, `k >= 1`, `m >= 1`.
pub fn exact_mean_z_power(alpha: f64, beta: f64, k: u64, m: u32) -> Result<f64> {
    require_positive("alpha", alpha)?;
    require_positive("beta", beta)?;
    if k == 0 || m == 0 {
        return Err(Error::Config("stick index and order start at 1".into()));
    }
    let table = StirlingTable::shared();
    let mut acc = CompensatedSum::new();
    for j in 1..=m {
        let coef = table.get(m as usize, j as usize)? as f64;
        let jf = j as f64;
        let geometric = (alpha / (alpha + jf)).powf((k - 1) as f64);
        acc.add(
            coef * beta_power_ratio(beta, j, &[m]) * factorial_u128(j) as f64
                / rising_factorial(alpha + 1.0, j)
                * geometric,
        );
    }
    Ok(acc.value())
}

/// `E(H_m(α, β))` for the one-group HDP.
pub fn exact_mean_hdp(alpha: f64, beta: f64, m: u32) -> Result<f64> {
    ModelParams::new(ModelSpec::Hdp, alpha, beta, m)?;
    let table = StirlingTable::shared();
    let mut acc = CompensatedSum::new();
    for j in 1..=m {
        let coef = table.get(m as usize, j as usize)? as f64;
        acc.add(
            coef * gamma_int(j) * beta_power_ratio(beta, j, &[m])
                / rising_factorial(alpha + 1.0, j - 1),
        );
    }
    Ok(acc.value())
}

/// `(x)_(n) / (y)_(n)` as a running product of ratios.
fn rising_ratio(x: f64, y: f64, n: u32) -> f64 {
    (0..n).fold(1.0, |acc, i| acc * (x + i as f64) / (y + i as f64))
}

/// `E(H_{m,n}(α, β))` for the finite-dimensional HDP of dimension `n`.
pub fn exact_mean_fdhdp(alpha: f64, beta: f64, n: usize, m: u32) -> Result<f64> {
    ModelParams::new(ModelSpec::Fdhdp { n }, alpha, beta, m)?;
    let table = StirlingTable::shared();
    let d = alpha / n as f64;
    let mut acc = CompensatedSum::new();
    for j in 1..=m {
        let coef = table.get(m as usize, j as usize)? as f64;
        acc.add(coef * beta_power_ratio(beta, j, &[m]) * rising_ratio(d + 1.0, alpha + 1.0, j - 1));
    }
    Ok(acc.value())
}

/// `E(H^L_m(α, β))` with the plain (non-multinomial) group weighting.
pub fn exact_mean_groups(alpha: f64, beta: f64, coeffs: &CoefficientSet) -> Result<f64> {
    exact_mean_groups_weighted(alpha, beta, coeffs, GroupWeighting::Plain)
}

fn multinomial(parts: &[u32]) -> f64 {
    let total: u32 = parts.iter().sum();
    let mut value = factorial_u128(total) as f64;
    for &p in parts {
        value /= factorial_u128(p) as f64;
    }
    value
}

pub fn exact_mean_groups_weighted(
    alpha: f64,
    beta: f64,
    coeffs: &CoefficientSet,
    weighting: GroupWeighting,
) -> Result<f64> {
    let m = coeffs.m();
    ModelParams::new(
        ModelSpec::Groups {
            groups: coeffs.groups(),
        },
        alpha,
        beta,
        m,
    )?;
    let mut outer = CompensatedSum::new();
    for (idx, comp) in coeffs.compositions().iter().enumerate() {
        let mut inner = CompensatedSum::new();
        for (jdx, &a) in coeffs.a(idx).iter().enumerate() {
            if a == 0 {
                continue;
            }
            let j = jdx as u32 + 1;
            inner.add(
                a as f64 * gamma_int(j) * beta_power_ratio(beta, j, comp.parts())
                    / rising_factorial(alpha + 1.0, j - 1),
            );
        }
        let weight = match weighting {
            GroupWeighting::Plain => 1.0,
            GroupWeighting::Multinomial => multinomial(comp.parts()),
        };
        outer.add(weight * inner.value());
    }
    Ok(outer.value() * (coeffs.groups() as f64).powi(-(m as i32)))
}

/// Exact mean of whichever model `params` names.
pub fn exact_mean(params: &ModelParams, coeffs: Option<&CoefficientSet>) -> Result<f64> {
    match params.model {
        ModelSpec::Hdp => exact_mean_hdp(params.alpha, params.beta, params.m),
        ModelSpec::Fdhdp { n } => exact_mean_fdhdp(params.alpha, params.beta, n, params.m),
        ModelSpec::Groups { .. } => {
            exact_mean_groups(params.alpha, params.beta, matching_coeffs(params, coeffs)?)
        }
    }
}

fn matching_coeffs<'a>(
    params: &ModelParams,
    coeffs: Option<&'a CoefficientSet>,
) -> Result<&'a CoefficientSet> {
    let ModelSpec::Groups { groups } = params.model else {
        unreachable!("only the groups model carries coefficients")
    };
    let coeffs = coeffs
        .ok_or_else(|| Error::ParameterMismatch("groups model needs a coefficient set".into()))?;
    if coeffs.m() != params.m || coeffs.groups() != groups {
        return Err(Error::ParameterMismatch(format!(
            "coefficients are for (m, L) = ({}, {}), model has ({}, {groups})",
            coeffs.m(),
            coeffs.groups(),
            params.m
        )));
    }
    Ok(coeffs)
}

fn stirling_row_tail(m: u32) -> Result<Vec<u128>> {
    Ok(StirlingTable::shared().row(m as usize)?[1..].to_vec())
}

/// The scaling function `f`: `f(β; m, c)`, `f(β; m, c, d)` or
/// `f(β; m, L, c)`, evaluated at `c = α/β` and `d = α/n`.
pub fn scale_factor(params: &ModelParams, coeffs: Option<&CoefficientSet>) -> Result<f64> {
    let m = params.m;
    let c = params.c();
    let leading = params.beta.powi(-(m as i32 - 1));
    match params.model {
        ModelSpec::Hdp => Ok(leading * gamma_weighted_sum(&stirling_row_tail(m)?, c)),
        ModelSpec::Fdhdp { .. } => {
            let d = params.d().expect("fdhdp has d");
            let row = stirling_row_tail(m)?;
            let sum = compensated_sum(row.iter().enumerate().map(|(idx, &coef)| {
                let j = idx as u32;
                coef as f64 * rising_factorial(d + 1.0, j) * c.powi(-(j as i32))
            }));
            Ok(leading * sum)
        }
        ModelSpec::Groups { groups } => {
            let coeffs = matching_coeffs(params, coeffs)?;
            Ok(
                leading
                    * gamma_weighted_sum(coeffs.totals(), c)
                    * (groups as f64).powi(-(m as i32)),
            )
        }
    }
}

/// The centering used in the limit theorems. For the HDP models it agrees
/// with [`scale_factor`] because `c` is taken as `α/β`; for the FDHDP it
/// keeps the finite-`α` rising factorials.
pub fn theorem_centering(params: &ModelParams, coeffs: Option<&CoefficientSet>) -> Result<f64> {
    let m = params.m;
    let ratio = params.alpha / params.beta;
    let leading = params.beta.powi(-(m as i32 - 1));
    match params.model {
        ModelSpec::Hdp => Ok(leading * gamma_weighted_sum(&stirling_row_tail(m)?, ratio)),
        ModelSpec::Fdhdp { .. } => {
            let d = params.d().expect("fdhdp has d");
            let row = stirling_row_tail(m)?;
            let sum = compensated_sum(row.iter().enumerate().map(|(idx, &coef)| {
                let j = idx as u32;
                coef as f64
                    * params.beta.powi(j as i32)
                    * rising_ratio(d + 1.0, params.alpha + 1.0, j)
            }));
            Ok(leading * sum)
        }
        ModelSpec::Groups { groups } => {
            let coeffs = matching_coeffs(params, coeffs)?;
            Ok(leading
                * gamma_weighted_sum(coeffs.totals(), ratio)
                * (groups as f64).powi(-(m as i32)))
        }
    }
}

/// Which value is subtracted before scaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Centering {
    /// The simplified centering from the limit theorems.
    #[default]
    Theorem,
    /// The exact finite-`(α, β)` mean.
    ExactMean,
}

impl Centering {
    pub fn name(&self) -> &'static str {
        match self {
            Centering::Theorem => "theorem",
            Centering::ExactMean => "exact-mean",
        }
    }
}

/// `value = √β (raw − centering) / scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledStatistic {
    pub value: f64,
    pub centering: f64,
    pub scale: f64,
    pub model: ModelSpec,
}

/// Precomputed centering and scale for repeated standardization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Standardizer {
    pub params: ModelParams,
    pub centering: f64,
    pub scale: f64,
}

impl Standardizer {
    pub fn new(
        params: ModelParams,
        mode: Centering,
        coeffs: Option<&CoefficientSet>,
    ) -> Result<Self> {
        let scale = scale_factor(&params, coeffs)?;
        if !(scale > 0.0) {
            return Err(Error::ParameterMismatch(format!(
                "scale must be positive, got {scale}"
            )));
        }
        let centering = match mode {
            Centering::Theorem => theorem_centering(&params, coeffs)?,
            Centering::ExactMean => exact_mean(&params, coeffs)?,
        };
        Ok(Self {
            params,
            centering,
            scale,
        })
    }

    pub fn apply(&self, raw: &HomozygosityValue) -> Result<ScaledStatistic> {
        if raw.order != self.params.m {
            return Err(Error::ParameterMismatch(format!(
                "statistic has order {}, model expects {}",
                raw.order, self.params.m
            )));
        }
        Ok(ScaledStatistic {
            value: self.params.beta.sqrt() * (raw.value - self.centering) / self.scale,
            centering: self.centering,
            scale: self.scale,
            model: self.params.model,
        })
    }
}

/// One-shot form of [`Standardizer::apply`].
pub fn scaled_statistic(
    raw: &HomozygosityValue,
    params: &ModelParams,
    mode: Centering,
    coeffs: Option<&CoefficientSet>,
) -> Result<ScaledStatistic> {
    Standardizer::new(*params, mode, coeffs)?.apply(raw)
}

fn rational(name: &'static str, value: f64) -> Result<BigRational> {
    BigRational::from_float(value).ok_or(Error::Domain {
        name,
        value,
        reason: "must be finite",
    })
}

fn rising_rational(x: &BigRational, n: u32) -> BigRational {
    (0..n).fold(BigRational::one(), |acc, i| {
        acc * (x + BigRational::from_integer(BigInt::from(i)))
    })
}

/// The exact mean as a rational number, treating `α` and `β` as the exact
/// binary fractions they are stored as.
pub fn exact_mean_rational(
    params: &ModelParams,
    coeffs: Option<&CoefficientSet>,
    weighting: GroupWeighting,
) -> Result<BigRational> {
    let alpha = rational("alpha", params.alpha)?;
    let beta = rational("beta", params.beta)?;
    let one = BigRational::one();
    let int = |v: u128| BigRational::from_integer(BigInt::from(v));
    let alpha_shift = &alpha + &one;
    // Σ_j coef_j (level-one factor)_j β^j / ∏_k (β)_(m_k)
    let series = |coefs: &[u128], parts: &[u32], level_one: &dyn Fn(u32) -> BigRational| {
        let denom = parts
            .iter()
            .fold(one.clone(), |acc, &p| acc * rising_rational(&beta, p));
        let mut sum = BigRational::zero();
        for (idx, &coef) in coefs.iter().enumerate() {
            if coef == 0 {
                continue;
            }
            let j = idx as u32 + 1;
            sum += int(coef) * level_one(j) * num_traits::pow(beta.clone(), j as usize);
        }
        sum / denom
    };
    let hdp_level_one = |j: u32| int(factorial_u128(j - 1)) / rising_rational(&alpha_shift, j - 1);
    match params.model {
        ModelSpec::Hdp => Ok(series(
            &stirling_row_tail(params.m)?,
            &[params.m],
            &hdp_level_one,
        )),
        ModelSpec::Fdhdp { n } => {
            let d_shift = &alpha / int(n as u128) + &one;
            let level_one =
                |j: u32| rising_rational(&d_shift, j - 1) / rising_rational(&alpha_shift, j - 1);
            Ok(series(
                &stirling_row_tail(params.m)?,
                &[params.m],
                &level_one,
            ))
        }
        ModelSpec::Groups { groups } => {
            let coeffs = matching_coeffs(params, coeffs)?;
            let mut total = BigRational::zero();
            for (idx, comp) in coeffs.compositions().iter().enumerate() {
                let weight = match weighting {
                    GroupWeighting::Plain => one.clone(),
                    GroupWeighting::Multinomial => comp
                        .parts()
                        .iter()
                        .fold(int(factorial_u128(params.m)), |acc, &p| {
                            acc / int(factorial_u128(p))
                        }),
                };
                total += weight * series(coeffs.a(idx), comp.parts(), &hdp_level_one);
            }
            Ok(total / num_traits::pow(int(groups as u128), params.m as usize))
        }
    }
}

/// Brute-force `Σ_{𝐦 ∈ M_{m,L}} ∏_k x_k^{m_k}` by explicit enumeration.
pub fn complete_homogeneous_by_enumeration(xs: &[f64], m: u32) -> Result<f64> {
    let comps: Vec<Composition> = compositions(m, xs.len())?;
    Ok(compensated_sum(comps.iter().map(|comp| {
        comp.parts()
            .iter()
            .zip(xs)
            .map(|(&p, &x)| x.powi(p as i32))
            .product::<f64>()
    })))
}
