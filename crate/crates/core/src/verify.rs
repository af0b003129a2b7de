//! Deterministic identity suite plus the covariance sign-convention finding.

use crate::asymptotics::{
    covariance_sigma_star, covariance_sigma_star_delta, equal_variance_ratio,
    level1_from_sigma_star, variance_fdhdp_with, variance_groups, variance_hdp_with,
    AsymptoticVariances, SignConvention,
};
use crate::combinatorics::{rising_factorial, CoefficientSet, StirlingTable, MAX_STIRLING_N};
use crate::error::Result;
use crate::montecarlo::sigma_star_monte_carlo;
use crate::numeric::gamma_int;

const GRID_C: [f64; 3] = [0.1, 1.0, 10.0];
const GRID_D: [f64; 3] = [0.1, 1.0, 10.0];
const GOLDEN: f64 = 1.618_033_988_749_895;

/// Outcome of one identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: String) -> Self {
        Self {
            name,
            passed,
            detail,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.detail
        )
    }
}

/// Options for [`run_identity_suite`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub monte_carlo: bool,
    pub seed: u64,
    pub replicates: usize,
    pub threads: Option<usize>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            monte_carlo: true,
            seed: 20_240_601,
            replicates: 10_000,
            threads: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
    /// Convention chosen by the algebraic level-one cross-check.
    pub algebraic_convention: Option<SignConvention>,
    /// Convention chosen by the Monte Carlo oracle, when it ran.
    pub monte_carlo_convention: Option<SignConvention>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn lines(&self) -> Vec<String> {
        self.checks.iter().map(Check::line).collect()
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1f64.max(a.abs().max(b.abs()))
}

fn component_gap(a: &AsymptoticVariances, b: &AsymptoticVariances) -> f64 {
    [
        rel(a.level1, b.level1),
        rel(a.level2, b.level2),
        rel(a.correction, b.correction),
        rel(a.total, b.total),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

/// Every variance on the grid, computed from `table`, paired with the same
/// model computed from `reference`.
fn variance_grid(
    table: &StirlingTable,
    reference: &StirlingTable,
) -> Result<Vec<(String, AsymptoticVariances, AsymptoticVariances)>> {
    let mut out = Vec::new();
    for m in 2..=6 {
        for &c in &GRID_C {
            out.push((
                format!("hdp m={m} c={c}"),
                variance_hdp_with(m, c, table)?,
                variance_hdp_with(m, c, reference)?,
            ));
            for &d in &GRID_D {
                out.push((
                    format!("fdhdp m={m} c={c} d={d}"),
                    variance_fdhdp_with(m, c, d, table)?,
                    variance_fdhdp_with(m, c, d, reference)?,
                ));
            }
            for groups in 1..=3 {
                out.push((
                    format!("groups m={m} L={groups} c={c}"),
                    variance_groups(&CoefficientSet::new(m, groups, c, table)?)?,
                    variance_groups(&CoefficientSet::new(m, groups, c, reference)?)?,
                ));
            }
        }
    }
    Ok(out)
}

/// Stirling table built by expanding `(x)_(n)` as a polynomial, independent
/// of the recurrence behind [`StirlingTable::new`].
pub fn reference_table() -> Result<StirlingTable> {
    let mut table = StirlingTable::new(MAX_STIRLING_N)?;
    let mut poly: Vec<u128> = vec![1];
    for n in 1..=MAX_STIRLING_N {
        // multiply by (x + n - 1)
        let shift = (n - 1) as u128;
        let mut next = vec![0u128; poly.len() + 1];
        for (k, &coef) in poly.iter().enumerate() {
            next[k + 1] += coef;
            next[k] += coef * shift;
        }
        poly = next;
        for (k, &coef) in poly.iter().enumerate() {
            table = table.with_entry(n, k, coef);
        }
    }
    Ok(table)
}

/// Runs every identity against `table`. Pass [`StirlingTable::shared`] for
/// the normal suite; a modified table must make it fail.
pub fn run_identity_suite(table: &StirlingTable, options: VerifyOptions) -> Result<VerifyReport> {
    let reference = reference_table()?;
    let mut checks = Vec::new();

    let grid = variance_grid(table, &reference)?;
    let mut worst_assembly: f64 = 0.0;
    let mut worst_route: f64 = 0.0;
    let mut worst_label = String::new();
    for (label, v, r) in &grid {
        worst_assembly =
            worst_assembly.max((v.total - (v.level1 + v.level2 - v.correction)).abs() / v.scale());
        // assembled total from the table under test, direct display from the reference
        let route = (v.total - r.direct_total).abs() / v.scale().max(r.scale());
        if route > worst_route || !route.is_finite() {
            worst_route = if route.is_finite() {
                route
            } else {
                f64::INFINITY
            };
            worst_label = label.clone();
        }
    }
    checks.push(Check::new(
        "decomposition",
        worst_assembly <= 1e-12 && worst_route <= 1e-9,
        format!(
            "{} configs, max assembly residual {worst_assembly:.3e}, max dual-route residual {worst_route:.3e} ({worst_label})",
            grid.len()
        ),
    ));

    let mut worst_groups: f64 = 0.0;
    for m in 2..=6 {
        for &c in &GRID_C {
            let g = variance_groups(&CoefficientSet::new(m, 1, c, table)?)?;
            let h = variance_hdp_with(m, c, table)?;
            worst_groups = worst_groups.max(component_gap(&g, &h));
        }
    }
    checks.push(Check::new(
        "groups-one-equals-hdp",
        worst_groups <= 1e-12,
        format!("max componentwise relative gap {worst_groups:.3e}"),
    ));

    let mut worst_fd: f64 = 0.0;
    for m in 2..=6 {
        for &c in &GRID_C {
            let f = variance_fdhdp_with(m, c, 1e-8, table)?;
            let h = variance_hdp_with(m, c, table)?;
            worst_fd = worst_fd.max(rel(f.total, h.total));
        }
    }
    checks.push(Check::new(
        "fdhdp-small-d-limit",
        worst_fd <= 1e-5,
        format!("d=1e-8, max relative gap to hdp {worst_fd:.3e}"),
    ));

    let mut worst_one_level: f64 = 0.0;
    for m in 2..=4 {
        let limit = gamma_int(2 * m) / gamma_int(m).powi(2) - (m * m) as f64;
        worst_one_level =
            worst_one_level.max((variance_hdp_with(m, 1e8, table)?.total - limit).abs());
    }
    checks.push(Check::new(
        "large-c-limit",
        worst_one_level <= 1e-5,
        format!("c=1e8, m=2..4, max absolute gap {worst_one_level:.3e}"),
    ));

    let root = equal_variance_ratio()?;
    checks.push(Check::new(
        "golden-ratio-root",
        (root - GOLDEN).abs() <= 1e-9,
        format!("root {root:.15}, gap {:.3e}", (root - GOLDEN).abs()),
    ));

    let mut worst_stirling: f64 = 0.0;
    for n in 1..=12usize {
        let row = table.row(n)?;
        for &x in &[0.5f64, 1.0, 2.5, 7.0] {
            let poly: f64 = row
                .iter()
                .enumerate()
                .map(|(k, &s)| s as f64 * x.powi(k as i32))
                .sum();
            worst_stirling = worst_stirling.max(rel(poly, rising_factorial(x, n as u32)));
        }
    }
    checks.push(Check::new(
        "stirling-rising-factorial",
        worst_stirling <= 1e-12,
        format!("n<=12, max relative gap {worst_stirling:.3e}"),
    ));

    // level-one variance rebuilt from the Dirichlet covariance, per convention
    let mut algebraic = Vec::new();
    for convention in SignConvention::ALL {
        let mut worst: f64 = 0.0;
        for m in 2..=6 {
            for &c in &GRID_C {
                for &d in &GRID_D {
                    let direct = variance_fdhdp_with(m, c, d, &reference)?.level1;
                    worst = worst.max(rel(level1_from_sigma_star(m, c, d, convention)?, direct));
                }
            }
        }
        algebraic.push((convention, worst));
    }
    let consistent: Vec<SignConvention> = algebraic
        .iter()
        .filter(|(_, r)| *r <= 1e-10)
        .map(|(c, _)| *c)
        .collect();
    let algebraic_convention = (consistent.len() == 1).then(|| consistent[0]);
    checks.push(Check::new(
        "sigma-star-algebraic",
        algebraic_convention.is_some(),
        format!(
            "level-one residual {} ; selected {}",
            algebraic
                .iter()
                .map(|(c, r)| format!("{}={r:.3e}", c.name()))
                .collect::<Vec<_>>()
                .join(" "),
            algebraic_convention.map_or("none", |c| c.name())
        ),
    ));

    let mut worst_delta: f64 = 0.0;
    for m in 2..=5 {
        for &d in &GRID_D {
            let closed = covariance_sigma_star(m, d, SignConvention::Plus)?;
            let delta = covariance_sigma_star_delta(m, d)?;
            for a in 0..closed.dim() {
                for b in 0..closed.dim() {
                    worst_delta = worst_delta.max(rel(closed.get(a, b), delta.get(a, b)));
                }
            }
        }
    }
    checks.push(Check::new(
        "sigma-star-delta-method",
        worst_delta <= 1e-9,
        format!("plus convention vs gradient sandwich, max relative gap {worst_delta:.3e}"),
    ));

    let mut monte_carlo_convention = None;
    if options.monte_carlo {
        let oracle = sigma_star_monte_carlo(
            1.0,
            2000,
            3,
            options.replicates,
            options.seed,
            options.threads,
            4.0,
        )?;
        monte_carlo_convention = oracle.selected;
        let agree = oracle.selected.is_some() && oracle.selected == algebraic_convention;
        checks.push(Check::new(
            "sigma-star-monte-carlo",
            agree,
            format!(
                "d=1 n=2000 R={} max |z| {} ; selected {} ; algebraic {}",
                oracle.replicates,
                oracle
                    .max_z
                    .iter()
                    .map(|(c, z)| format!("{}={z:.2}", c.name()))
                    .collect::<Vec<_>>()
                    .join(" "),
                oracle.selected.map_or("none", |c| c.name()),
                algebraic_convention.map_or("none", |c| c.name())
            ),
        ));
    }

    Ok(VerifyReport {
        checks,
        algebraic_convention,
        monte_carlo_convention,
    })
}
