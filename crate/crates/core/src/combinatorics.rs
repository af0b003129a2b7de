//! Exact Stirling numbers of the first kind and the composition-indexed
//! coefficient families built from them.
//!
//! Every coefficient is an exact `u128`; floats only appear when a
//! coefficient is combined with `Γ(j)` and a power of `c`.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::numeric::{factorial_u128, inverse_power, CompensatedSum};

/// Largest row served by [`StirlingTable`]. Row 33 still fits in `u128`
/// and covers `[2m, j]` for every order `m <= 16`.
pub const MAX_STIRLING_N: usize = 33;

/// Default cap on the number of compositions an enumeration may produce.
pub const DEFAULT_COMPOSITION_CAP: u128 = 1_000_000;

/// Triangular table of unsigned Stirling numbers of the first kind `[n k]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StirlingTable {
    rows: Vec<Vec<u128>>,
}

impl StirlingTable {
    /// Builds rows `0..=max_n` with the recurrence
    /// `[n+1, k] = n [n, k] + [n, k-1]`, every step overflow-checked.
    pub fn new(max_n: usize) -> Result<Self> {
        if max_n > MAX_STIRLING_N {
            return Err(Error::Range(format!(
                "Stirling table requested up to n = {max_n}, exact limit is {MAX_STIRLING_N}"
            )));
        }
        let mut rows: Vec<Vec<u128>> = Vec::with_capacity(max_n + 1);
        rows.push(vec![1]);
        for n in 0..max_n {
            let prev = &rows[n];
            let mut next = vec![0u128; n + 2];
            for k in 1..=n + 1 {
                let carried = if k <= n {
                    prev[k].checked_mul(n as u128)
                } else {
                    Some(0)
                };
                next[k] = carried
                    .and_then(|v| v.checked_add(prev[k - 1]))
                    .ok_or_else(|| Error::Range(format!("[{} {}] overflows u128", n + 1, k)))?;
            }
            rows.push(next);
        }
        Ok(Self { rows })
    }

    /// The process-wide table with every supported row.
    pub fn shared() -> &'static StirlingTable {
        static TABLE: OnceLock<StirlingTable> = OnceLock::new();
        TABLE.get_or_init(|| StirlingTable::new(MAX_STIRLING_N).expect("row 33 fits in u128"))
    }

    pub fn max_n(&self) -> usize {
        self.rows.len() - 1
    }

    /// `[n k]`, zero when `k > n`.
    pub fn get(&self, n: usize, k: usize) -> Result<u128> {
        let row = self.row(n)?;
        Ok(row.get(k).copied().unwrap_or(0))
    }

    /// Coefficients of the rising factorial `(x)_(n)` in increasing powers of `x`.
    pub fn row(&self, n: usize) -> Result<&[u128]> {
        self.rows.get(n).map(Vec::as_slice).ok_or_else(|| {
            Error::Range(format!(
                "Stirling row {n} requested, table holds rows up to {}",
                self.max_n()
            ))
        })
    }

    /// Replaces one entry. Only meant for negative tests of the identity suite.
    #[doc(hidden)]
    pub fn with_entry(mut self, n: usize, k: usize, value: u128) -> Self {
        self.rows[n][k] = value;
        self
    }
}

/// `[n k]` from the shared table.
pub fn stirling_first_unsigned(n: usize, k: usize) -> Result<u128> {
    StirlingTable::shared().get(n, k)
}

/// `x (x+1) ... (x+n-1)`, one for `n = 0`.
pub fn rising_factorial(x: f64, n: u32) -> f64 {
    (0..n).fold(1.0, |acc, i| acc * (x + i as f64))
}

/// An ordered tuple of nonnegative parts.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Composition {
    parts: Vec<u32>,
    total: u32,
}

impl Composition {
    pub fn new(parts: Vec<u32>) -> Self {
        let total = parts.iter().sum();
        Self { parts, total }
    }

    pub fn parts(&self) -> &[u32] {
        &self.parts
    }

    pub fn total(&self) -> u32 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }
}

/// `binomial(total + groups - 1, groups - 1)`, or `None` on overflow.
pub fn composition_count(total: u32, groups: usize) -> Option<u128> {
    if groups == 0 {
        return Some(u128::from(total == 0));
    }
    let n = total as u128 + groups as u128 - 1;
    let k = (groups as u128 - 1).min(total as u128);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) is divisible by i + 1 at every step.
        acc = acc.checked_mul(n - i)? / (i + 1);
    }
    Some(acc)
}

/// All compositions of `total` into `groups` parts, lexicographically
/// ascending, under the default cap.
pub fn compositions(total: u32, groups: usize) -> Result<Vec<Composition>> {
    compositions_capped(total, groups, DEFAULT_COMPOSITION_CAP)
}

pub fn compositions_capped(total: u32, groups: usize, cap: u128) -> Result<Vec<Composition>> {
    if groups == 0 {
        return Err(Error::Config("compositions need at least one part".into()));
    }
    let needed = composition_count(total, groups).unwrap_or(u128::MAX);
    if needed > cap {
        return Err(Error::Resource {
            what: "compositions",
            needed,
            cap,
        });
    }
    let mut out = Vec::with_capacity(needed as usize);
    let mut parts = vec![0u32; groups];
    fill_compositions(&mut parts, 0, total, &mut out);
    Ok(out)
}

fn fill_compositions(parts: &mut [u32], pos: usize, remaining: u32, out: &mut Vec<Composition>) {
    if pos + 1 == parts.len() {
        parts[pos] = remaining;
        out.push(Composition::new(parts.to_vec()));
        return;
    }
    for first in 0..=remaining {
        parts[pos] = first;
        fill_compositions(parts, pos + 1, remaining - first, out);
    }
}

/// Product of rising-factorial polynomials `∏_k (x)_(n_k)`, as exact
/// coefficients of `x^0 ..= x^(Σ n_k)`.
fn rising_product(parts: &[u32], table: &StirlingTable) -> Result<Vec<u128>> {
    let mut acc = vec![1u128];
    for &n in parts {
        let row = table.row(n as usize)?;
        let mut next = vec![0u128; acc.len() + row.len() - 1];
        for (i, &a) in acc.iter().enumerate() {
            if a == 0 {
                continue;
            }
            for (j, &b) in row.iter().enumerate() {
                let term = a.checked_mul(b).ok_or_else(|| {
                    Error::Range("rising-factorial product overflows u128".into())
                })?;
                next[i + j] = next[i + j].checked_add(term).ok_or_else(|| {
                    Error::Range("rising-factorial product overflows u128".into())
                })?;
            }
        }
        acc = next;
    }
    Ok(acc)
}

fn checked_accumulate(into: &mut [u128], from: &[u128], times: u128) -> Result<()> {
    for (dst, &src) in into.iter_mut().zip(from) {
        *dst = src
            .checked_mul(times)
            .and_then(|v| dst.checked_add(v))
            .ok_or_else(|| Error::Range("coefficient sum overflows u128".into()))?;
    }
    Ok(())
}

/// `a_1 ..= a_m` for one composition `𝐦` of `m`:
/// `a_j = Σ_{𝐣 ∈ M_{j,L}} ∏_k [m_k, j_k]`.
///
/// The sum over `𝐣` is the `x^j` coefficient of `∏_k (x)_(m_k)`, which is
/// how it is evaluated here.
pub fn composition_coefficients(
    composition: &Composition,
    table: &StirlingTable,
) -> Result<Vec<u128>> {
    let m = composition.total() as usize;
    if m == 0 {
        return Err(Error::Config(
            "composition coefficients need a positive total".into(),
        ));
    }
    let poly = rising_product(composition.parts(), table)?;
    Ok(poly[1..=m].to_vec())
}

/// `A_1 ..= A_m` with `A_j = Σ_{𝐦 ∈ M_{m,L}} a_j(𝐦)`.
pub fn total_coefficients(
    m: u32,
    groups: usize,
    table: &StirlingTable,
    cap: u128,
) -> Result<Vec<u128>> {
    let mut totals = vec![0u128; m as usize];
    for comp in compositions_capped(m, groups, cap)? {
        checked_accumulate(&mut totals, &composition_coefficients(&comp, table)?, 1)?;
    }
    Ok(totals)
}

/// `Ã_1 ..= Ã_{2m}`: the `x^j` coefficient of `∏_k (x)_(m_{1k} + m_{2k})`
/// summed over ordered pairs of compositions of `m`.
pub fn pair_coefficients(
    m: u32,
    groups: usize,
    table: &StirlingTable,
    cap: u128,
) -> Result<Vec<u128>> {
    let comps = compositions_capped(m, groups, cap)?;
    let pairs = (comps.len() as u128).saturating_mul(comps.len() as u128);
    if pairs > cap {
        return Err(Error::Resource {
            what: "composition pairs",
            needed: pairs,
            cap,
        });
    }
    // Many pairs share the same elementwise sum; evaluate each sum once.
    let mut sums: BTreeMap<Vec<u32>, u128> = BTreeMap::new();
    for first in &comps {
        for second in &comps {
            let key: Vec<u32> = first
                .parts()
                .iter()
                .zip(second.parts())
                .map(|(a, b)| a + b)
                .collect();
            *sums.entry(key).or_insert(0) += 1;
        }
    }
    let len = 2 * m as usize;
    let mut totals = vec![0u128; len];
    for (parts, multiplicity) in sums {
        let poly = rising_product(&parts, table)?;
        checked_accumulate(&mut totals, &poly[1..=len], multiplicity)?;
    }
    Ok(totals)
}

/// `Σ_j coeffs[j-1] Γ(j) / c^(j-1)`, compensated.
pub fn gamma_weighted_sum(coeffs: &[u128], c: f64) -> f64 {
    let mut acc = CompensatedSum::new();
    for (idx, &coef) in coeffs.iter().enumerate() {
        if coef == 0 {
            continue;
        }
        let j = idx as u32 + 1;
        // Γ(j) and the coefficient are exact integers; join them before
        // converting when the product still fits.
        let exact = coef.checked_mul(factorial_u128(j - 1));
        let weight = match exact {
            Some(v) => v as f64,
            None => coef as f64 * factorial_u128(j - 1) as f64,
        };
        acc.add(weight * inverse_power(c, j - 1));
    }
    acc.value()
}

/// `C_𝐦`: the share of composition `𝐦` in the leading-order mean.
pub fn composition_share(
    composition: &Composition,
    c: f64,
    table: &StirlingTable,
    cap: u128,
) -> Result<f64> {
    crate::error::require_positive("c", c)?;
    let a = composition_coefficients(composition, table)?;
    let totals = total_coefficients(composition.total(), composition.len(), table, cap)?;
    Ok(gamma_weighted_sum(&a, c) / gamma_weighted_sum(&totals, c))
}

/// All coefficient families for one `(m, L, c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSet {
    m: u32,
    groups: usize,
    c: f64,
    compositions: Vec<Composition>,
    per_composition: Vec<Vec<u128>>,
    totals: Vec<u128>,
    pair_totals: Vec<u128>,
    shares: Vec<f64>,
}

impl CoefficientSet {
    pub fn new(m: u32, groups: usize, c: f64, table: &StirlingTable) -> Result<Self> {
        Self::with_cap(m, groups, c, table, DEFAULT_COMPOSITION_CAP)
    }

    pub fn with_cap(
        m: u32,
        groups: usize,
        c: f64,
        table: &StirlingTable,
        cap: u128,
    ) -> Result<Self> {
        if m < 2 {
            return Err(Error::Config(format!(
                "order m must be at least 2, got {m}"
            )));
        }
        if groups == 0 {
            return Err(Error::Config("group count L must be at least 1".into()));
        }
        crate::error::require_positive("c", c)?;

        let compositions = compositions_capped(m, groups, cap)?;
        let per_composition = compositions
            .iter()
            .map(|comp| composition_coefficients(comp, table))
            .collect::<Result<Vec<_>>>()?;
        let mut totals = vec![0u128; m as usize];
        for a in &per_composition {
            checked_accumulate(&mut totals, a, 1)?;
        }
        let pair_totals = pair_coefficients(m, groups, table, cap)?;
        let denom = gamma_weighted_sum(&totals, c);
        let shares = per_composition
            .iter()
            .map(|a| gamma_weighted_sum(a, c) / denom)
            .collect();
        Ok(Self {
            m,
            groups,
            c,
            compositions,
            per_composition,
            totals,
            pair_totals,
            shares,
        })
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn compositions(&self) -> &[Composition] {
        &self.compositions
    }

    /// `a_j(𝐦)` for the composition at `index` in [`Self::compositions`].
    pub fn a(&self, index: usize) -> &[u128] {
        &self.per_composition[index]
    }

    /// `A_1 ..= A_m`.
    pub fn totals(&self) -> &[u128] {
        &self.totals
    }

    /// `Ã_1 ..= Ã_{2m}`.
    pub fn pair_totals(&self) -> &[u128] {
        &self.pair_totals
    }

    /// `C_𝐦`, aligned with [`Self::compositions`].
    pub fn shares(&self) -> &[f64] {
        &self.shares
    }

    /// `Σ_𝐦 C_𝐦 m_k` for each group `k`.
    pub fn share_weighted_parts(&self) -> Vec<f64> {
        (0..self.groups)
            .map(|k| {
                let mut acc = CompensatedSum::new();
                for (comp, share) in self.compositions.iter().zip(&self.shares) {
                    acc.add(share * comp.parts()[k] as f64);
                }
                acc.value()
            })
            .collect()
    }
}
