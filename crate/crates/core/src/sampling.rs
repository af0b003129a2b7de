//! Seeded generation of GEM, HDP, L-group HDP and finite-dimensional HDP
//! weight vectors.
//!
//! Infinite stick-breaking is truncated once the unbroken stick falls below
//! a tolerance `eps`; the leftover mass is carried as `tail_mass`, which
//! bounds the omitted contribution to any power sum of order `m >= 1`.
//! Level-two weights use the gamma-ratio representation: one
//! `Gamma(β V_k)` variate per stick plus a single `Gamma(β · tail)` lump.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{require_positive, Error, Result};
use crate::numeric::CompensatedSum;

/// Default truncation tolerance for stick-breaking.
pub const DEFAULT_EPS: f64 = 1e-10;

/// Default cap on the number of sticks broken for one vector.
pub const DEFAULT_MAX_STICKS: usize = 10_000_000;

/// Streams reserved per replicate; see [`Role`].
pub const STREAMS_PER_REPLICATE: u64 = 16;

/// Largest supported group count (roles `1..=14` are the groups).
pub const MAX_GROUPS: usize = 14;

/// A reproducible random stream keyed by `(root_seed, stream_index)`.
///
/// Backed by ChaCha20 with the stream index as the cipher's stream id, so
/// distinct indices are independent and no stream depends on how many
/// others were consumed.
#[derive(Debug, Clone)]
pub struct RngStream {
    root_seed: u64,
    stream_index: u64,
    rng: ChaCha20Rng,
}

impl RngStream {
    pub fn new(root_seed: u64, stream_index: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(root_seed);
        rng.set_stream(stream_index);
        Self {
            root_seed,
            stream_index,
            rng,
        }
    }

    pub fn root_seed(&self) -> u64 {
        self.root_seed
    }

    pub fn stream_index(&self) -> u64 {
        self.stream_index
    }

    /// Uniform on `(0, 1]`; never zero, so its logarithm is finite.
    pub fn uniform_open0(&mut self) -> f64 {
        1.0 - self.rng.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn rng(&mut self) -> &mut ChaCha20Rng {
        &mut self.rng
    }
}

/// Role of a stream inside one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// Level-one sticks (or the first Dirichlet layer of the FDHDP).
    Level1,
    /// Level-two gammas of group `k`, `1 <= k <= MAX_GROUPS`.
    Group(usize),
    /// Second Dirichlet layer of the FDHDP.
    FdhdpLayer2,
}

impl Role {
    pub fn offset(self) -> u64 {
        match self {
            Role::Level1 => 0,
            Role::Group(k) => {
                assert!((1..=MAX_GROUPS).contains(&k), "group role {k} out of range");
                k as u64
            }
            Role::FdhdpLayer2 => STREAMS_PER_REPLICATE - 1,
        }
    }
}

/// Stream factory for one replicate:
/// `stream_index = replicate * 16 + role offset`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplicateStreams {
    pub root_seed: u64,
    pub replicate: u64,
}

impl ReplicateStreams {
    pub fn new(root_seed: u64, replicate: u64) -> Self {
        Self {
            root_seed,
            replicate,
        }
    }

    pub fn stream(&self, role: Role) -> RngStream {
        RngStream::new(
            self.root_seed,
            self.replicate * STREAMS_PER_REPLICATE + role.offset(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightModel {
    Gem,
    Hdp,
    FdhdpRow,
}

/// Finite truncation of a random point of the infinite simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub weights: Vec<f64>,
    pub tail_mass: f64,
    pub model: WeightModel,
}

impl WeightVector {
    /// `Σ weights + tail_mass`, which is one up to rounding.
    pub fn total_mass(&self) -> f64 {
        let mut acc = CompensatedSum::new();
        acc.extend(self.weights.iter().copied());
        acc.add(self.tail_mass);
        acc.value()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Level-one weights together with `L` level-two groups on the same sticks.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupFamily {
    pub base: WeightVector,
    pub groups: Vec<WeightVector>,
}

/// One `Gamma(shape, 1)` draw.
///
/// Shapes below one use `Gamma(a) = Gamma(a + 1) · U^(1/a)` with the power
/// taken in log scale; results below the smallest normal flush to zero.
pub fn gamma_variate(shape: f64, stream: &mut RngStream) -> Result<f64> {
    require_positive("shape", shape)?;
    Ok(gamma_unchecked(shape, stream))
}

/// Like [`gamma_variate`] but treats shape zero as the point mass at zero.
fn gamma_or_zero(shape: f64, stream: &mut RngStream) -> f64 {
    if shape == 0.0 {
        0.0
    } else {
        gamma_unchecked(shape, stream)
    }
}

fn gamma_unchecked(shape: f64, stream: &mut RngStream) -> f64 {
    if shape < 1.0 {
        let boosted = marsaglia_tsang(shape + 1.0, stream);
        let log_value = boosted.ln() + stream.uniform_open0().ln() / shape;
        if log_value < f64::MIN_POSITIVE.ln() {
            0.0
        } else {
            log_value.exp()
        }
    } else {
        marsaglia_tsang(shape, stream)
    }
}

// Marsaglia & Tsang (2000), valid for shape >= 1.
fn marsaglia_tsang(shape: f64, stream: &mut RngStream) -> f64 {
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = stream.standard_normal();
        let t = 1.0 + c * x;
        if t <= 0.0 {
            continue;
        }
        let v = t * t * t;
        let u = stream.uniform_open0();
        if u.ln() < 0.5 * x * x + d - d * v + d * v.ln() {
            return d * v;
        }
    }
}

/// GEM stick-breaking with `U_k ~ Beta(1, α)` drawn as `1 - U^(1/α)`.
struct StickBreaker {
    alpha: f64,
    log_remaining: f64,
    stream: RngStream,
}

impl StickBreaker {
    fn new(alpha: f64, stream: RngStream) -> Self {
        Self {
            alpha,
            log_remaining: 0.0,
            stream,
        }
    }

    fn remaining(&self) -> f64 {
        self.log_remaining.exp()
    }

    fn next_stick(&mut self) -> f64 {
        // ln(1 - U_k) = ln(U) / α
        let log_keep = self.stream.uniform_open0().ln() / self.alpha;
        let stick = self.remaining() * -log_keep.exp_m1();
        self.log_remaining += log_keep;
        stick
    }

    /// Breaks sticks into `out` until the unbroken mass is below `target`.
    fn extend_until(&mut self, target: f64, out: &mut Vec<f64>, max_sticks: usize) -> Result<()> {
        while self.remaining() >= target {
            if out.len() >= max_sticks {
                return Err(Error::IterationCap { cap: max_sticks });
            }
            out.push(self.next_stick());
        }
        Ok(())
    }
}

fn validate_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain {
            name: "eps",
            value: eps,
            reason: "truncation tolerance must lie in (0, 1)",
        })
    }
}

/// GEM(α) weights truncated once the unbroken stick is below `eps`.
pub fn sample_gem(alpha: f64, eps: f64, stream: &mut RngStream) -> Result<WeightVector> {
    sample_gem_capped(alpha, eps, stream, DEFAULT_MAX_STICKS)
}

pub fn sample_gem_capped(
    alpha: f64,
    eps: f64,
    stream: &mut RngStream,
    max_sticks: usize,
) -> Result<WeightVector> {
    require_positive("alpha", alpha)?;
    validate_eps(eps)?;
    let mut breaker = StickBreaker::new(alpha, stream.clone());
    let mut weights = Vec::new();
    let outcome = breaker.extend_until(eps, &mut weights, max_sticks);
    *stream = breaker.stream;
    outcome?;
    Ok(WeightVector {
        weights,
        tail_mass: breaker.log_remaining.exp(),
        model: WeightModel::Gem,
    })
}

/// One-group HDP weights `Z_k = γ_k / (Σ γ + γ_tail)`.
///
/// Uses the level-one stream and the stream of group 1, so it coincides
/// with [`sample_hdp_groups`] at `L = 1`.
pub fn sample_hdp(
    alpha: f64,
    beta: f64,
    eps: f64,
    streams: &ReplicateStreams,
) -> Result<WeightVector> {
    let mut family = sample_hdp_groups(alpha, beta, 1, eps, streams)?;
    Ok(family.groups.pop().expect("one group"))
}

/// `L` HDP groups sharing one level-one stick sequence.
///
/// Each group normalizes its own gamma variates. If a group's normalized
/// tail lump exceeds `eps`, all groups get further sticks (and fresh tail
/// lumps) until every tail is certified below `eps`.
pub fn sample_hdp_groups(
    alpha: f64,
    beta: f64,
    groups: usize,
    eps: f64,
    streams: &ReplicateStreams,
) -> Result<GroupFamily> {
    sample_hdp_groups_capped(alpha, beta, groups, eps, streams, DEFAULT_MAX_STICKS)
}

pub fn sample_hdp_groups_capped(
    alpha: f64,
    beta: f64,
    groups: usize,
    eps: f64,
    streams: &ReplicateStreams,
    max_sticks: usize,
) -> Result<GroupFamily> {
    require_positive("alpha", alpha)?;
    require_positive("beta", beta)?;
    validate_eps(eps)?;
    if groups == 0 || groups > MAX_GROUPS {
        return Err(Error::Config(format!(
            "group count must be in 1..={MAX_GROUPS}, got {groups}"
        )));
    }

    let mut breaker = StickBreaker::new(alpha, streams.stream(Role::Level1));
    let mut group_streams: Vec<RngStream> = (1..=groups)
        .map(|k| streams.stream(Role::Group(k)))
        .collect();
    let mut sticks = Vec::new();
    let mut gammas: Vec<Vec<f64>> = vec![Vec::new(); groups];
    let mut target = eps;

    loop {
        breaker.extend_until(target, &mut sticks, max_sticks)?;
        for (stream, drawn) in group_streams.iter_mut().zip(gammas.iter_mut()) {
            for &v in &sticks[drawn.len()..] {
                drawn.push(gamma_or_zero(beta * v, stream));
            }
        }
        let remaining = breaker.remaining();
        let mut normalized = Vec::with_capacity(groups);
        let mut certified = true;
        for (stream, drawn) in group_streams.iter_mut().zip(&gammas) {
            let tail = gamma_or_zero(beta * remaining, stream);
            let mut total = CompensatedSum::new();
            total.extend(drawn.iter().copied());
            total.add(tail);
            let total = total.value();
            if !(total > 0.0) {
                return Err(Error::ZeroTotal("all level-two gamma variates underflowed"));
            }
            let tail_mass = tail / total;
            certified &= tail_mass <= eps;
            normalized.push(WeightVector {
                weights: drawn.iter().map(|g| g / total).collect(),
                tail_mass,
                model: WeightModel::Hdp,
            });
        }
        if certified {
            return Ok(GroupFamily {
                base: WeightVector {
                    weights: sticks,
                    tail_mass: remaining,
                    model: WeightModel::Gem,
                },
                groups: normalized,
            });
        }
        target = remaining * 1e-3;
    }
}

/// Symmetric `Dir(shape, ..., shape)` of dimension `n` via normalized gammas.
pub fn sample_symmetric_dirichlet(
    shape: f64,
    n: usize,
    stream: &mut RngStream,
) -> Result<Vec<f64>> {
    require_positive("shape", shape)?;
    let draws: Vec<f64> = (0..n).map(|_| gamma_unchecked(shape, stream)).collect();
    normalize(draws, "symmetric Dirichlet gammas underflowed")
}

fn normalize(draws: Vec<f64>, what: &'static str) -> Result<Vec<f64>> {
    let total = crate::numeric::compensated_sum(draws.iter().copied());
    if !(total > 0.0) {
        return Err(Error::ZeroTotal(what));
    }
    Ok(draws.into_iter().map(|g| g / total).collect())
}

/// Finite-dimensional HDP weights: `W ~ Dir(α/n, ...)`, then
/// `Z ~ Dir(β W_1, ..., β W_n)`. Exactly `n` weights, no tail.
pub fn sample_fdhdp(
    alpha: f64,
    beta: f64,
    n: usize,
    streams: &ReplicateStreams,
) -> Result<WeightVector> {
    require_positive("alpha", alpha)?;
    require_positive("beta", beta)?;
    if n == 0 {
        return Err(Error::Config("FDHDP dimension n must be at least 1".into()));
    }
    let mut layer1 = streams.stream(Role::Level1);
    let mut layer2 = streams.stream(Role::FdhdpLayer2);
    let base = sample_symmetric_dirichlet(alpha / n as f64, n, &mut layer1)?;
    let draws = base
        .iter()
        .map(|&w| gamma_or_zero(beta * w, &mut layer2))
        .collect();
    Ok(WeightVector {
        weights: normalize(draws, "FDHDP level-two gammas underflowed")?,
        tail_mass: 0.0,
        model: WeightModel::FdhdpRow,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_and_se(values: &[f64]) -> (f64, f64) {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut a = RngStream::new(7, 3);
        let mut b = RngStream::new(7, 3);
        let mut c = RngStream::new(7, 4);
        let xa: Vec<f64> = (0..5).map(|_| a.uniform_open0()).collect();
        let xb: Vec<f64> = (0..5).map(|_| b.uniform_open0()).collect();
        let xc: Vec<f64> = (0..5).map(|_| c.uniform_open0()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn role_offsets() {
        let streams = ReplicateStreams::new(1, 5);
        assert_eq!(streams.stream(Role::Level1).stream_index(), 80);
        assert_eq!(streams.stream(Role::Group(3)).stream_index(), 83);
        assert_eq!(streams.stream(Role::FdhdpLayer2).stream_index(), 95);
    }

    #[test]
    fn gamma_rejects_nonpositive_shape() {
        let mut s = RngStream::new(1, 0);
        assert!(gamma_variate(0.0, &mut s).is_err());
        assert!(gamma_variate(-1.0, &mut s).is_err());
        assert!(gamma_variate(f64::NAN, &mut s).is_err());
    }

    #[test]
    fn gamma_is_deterministic() {
        let a = gamma_variate(0.3, &mut RngStream::new(11, 2)).unwrap();
        let b = gamma_variate(0.3, &mut RngStream::new(11, 2)).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn gamma_tiny_shape_flushes_to_zero() {
        let mut s = RngStream::new(5, 0);
        let draws: Vec<f64> = (0..1000)
            .map(|_| gamma_variate(1e-12, &mut s).unwrap())
            .collect();
        assert!(draws.iter().all(|&x| x == 0.0 || x >= f64::MIN_POSITIVE));
        assert!(draws.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn gamma_first_two_moments() {
        for &shape in &[0.2, 2.0, 7.5] {
            let mut s = RngStream::new(2024, 1);
            let draws: Vec<f64> = (0..100_000)
                .map(|_| gamma_variate(shape, &mut s).unwrap())
                .collect();
            let (m1, se1) = mean_and_se(&draws);
            assert!((m1 - shape).abs() < 4.0 * se1, "shape {shape}: mean {m1}");
            let squares: Vec<f64> = draws.iter().map(|x| x * x).collect();
            let (m2, se2) = mean_and_se(&squares);
            assert!(
                (m2 - shape * (shape + 1.0)).abs() < 4.0 * se2,
                "shape {shape}: E[X^2] {m2}"
            );
        }
    }

    #[test]
    fn gem_first_stick_mean() {
        let alpha = 3.0;
        let firsts: Vec<f64> = (0..100_000u64)
            .map(|r| {
                sample_gem(alpha, 1e-6, &mut RngStream::new(9, r))
                    .unwrap()
                    .weights[0]
            })
            .collect();
        let (mean, se) = mean_and_se(&firsts);
        assert!((mean - 1.0 / (1.0 + alpha)).abs() < 4.0 * se);
    }

    #[test]
    fn gem_tail_respects_tolerance() {
        let w = sample_gem(5.0, 1e-8, &mut RngStream::new(3, 0)).unwrap();
        assert!(w.tail_mass < 1e-8);
        assert!((w.total_mass() - 1.0).abs() < 1e-9);
        assert_eq!(w.model, WeightModel::Gem);
    }

    #[test]
    fn gem_iteration_cap() {
        let err = sample_gem_capped(1e6, 1e-10, &mut RngStream::new(3, 0), 1000).unwrap_err();
        assert_eq!(err, Error::IterationCap { cap: 1000 });
    }

    #[test]
    fn gem_rejects_bad_parameters() {
        let mut s = RngStream::new(0, 0);
        assert!(sample_gem(0.0, 1e-6, &mut s).is_err());
        assert!(sample_gem(1.0, 0.0, &mut s).is_err());
        assert!(sample_gem(1.0, 1.0, &mut s).is_err());
    }

    #[test]
    fn hdp_normalizes_and_repeats() {
        let streams = ReplicateStreams::new(42, 7);
        let a = sample_hdp(5.0, 5.0, 1e-10, &streams).unwrap();
        let b = sample_hdp(5.0, 5.0, 1e-10, &streams).unwrap();
        assert_eq!(a, b);
        assert!((a.total_mass() - 1.0).abs() < 1e-9);
        assert!(a.tail_mass <= 1e-10);
    }

    #[test]
    fn single_group_family_equals_hdp() {
        let streams = ReplicateStreams::new(42, 8);
        let hdp = sample_hdp(3.0, 2.0, 1e-10, &streams).unwrap();
        let family = sample_hdp_groups(3.0, 2.0, 1, 1e-10, &streams).unwrap();
        assert_eq!(family.groups, vec![hdp]);
    }

    #[test]
    fn groups_share_truncation() {
        let family = sample_hdp_groups(4.0, 6.0, 3, 1e-10, &ReplicateStreams::new(1, 1)).unwrap();
        let k = family.base.len();
        assert!(family.groups.iter().all(|g| g.len() == k));
        assert!(family
            .groups
            .iter()
            .all(|g| (g.total_mass() - 1.0).abs() < 1e-9));
        assert_ne!(family.groups[0], family.groups[1]);
    }

    #[test]
    fn group_count_limits() {
        let streams = ReplicateStreams::new(1, 1);
        assert!(sample_hdp_groups(1.0, 1.0, 0, 1e-6, &streams).is_err());
        assert!(sample_hdp_groups(1.0, 1.0, MAX_GROUPS + 1, 1e-6, &streams).is_err());
    }

    #[test]
    fn fdhdp_degenerate_dimension() {
        let w = sample_fdhdp(2.0, 3.0, 1, &ReplicateStreams::new(0, 0)).unwrap();
        assert_eq!(w.weights, vec![1.0]);
        assert_eq!(w.tail_mass, 0.0);
        assert!(sample_fdhdp(2.0, 3.0, 0, &ReplicateStreams::new(0, 0)).is_err());
    }

    #[test]
    fn fdhdp_shape_and_repeat() {
        let streams = ReplicateStreams::new(5, 5);
        let a = sample_fdhdp(4.0, 4.0, 10, &streams).unwrap();
        assert_eq!(a.len(), 10);
        assert_eq!(a, sample_fdhdp(4.0, 4.0, 10, &streams).unwrap());
        assert!((a.total_mass() - 1.0).abs() < 1e-12);
    }
}
