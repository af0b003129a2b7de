//! Small numeric helpers shared by the formula modules.

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl Extend<f64> for CompensatedSum {
    fn extend<I: IntoIterator<Item = f64>>(&mut self, iter: I) {
        for x in iter {
            self.add(x);
        }
    }
}

/// Compensated sum of an iterator of terms.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(terms: I) -> f64 {
    let mut acc = CompensatedSum::new();
    acc.extend(terms);
    acc.value()
}

/// `x^(-k)` for a positive base, switching to log scale far from 1.
pub fn inverse_power(x: f64, k: u32) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if !(1e-3..=1e3).contains(&x) {
        (-(k as f64) * x.ln()).exp()
    } else {
        x.powi(-(k as i32))
    }
}

/// Exact `(n-1)!` as a float, i.e. the gamma function at a positive integer.
pub fn gamma_int(n: u32) -> f64 {
    assert!(n >= 1, "gamma_int needs a positive integer");
    factorial_u128(n - 1) as f64
}

/// `n!` in exact arithmetic; panics past 34! which does not fit.
pub fn factorial_u128(n: u32) -> u128 {
    (1..=n as u128).fold(1u128, |acc, k| {
        acc.checked_mul(k).expect("factorial overflows u128")
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let terms = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(terms), 2.0);
        assert_ne!(terms.iter().sum::<f64>(), 2.0);
    }

    #[test]
    fn inverse_power_matches_powi_in_both_regimes() {
        for &x in &[1e-5f64, 0.5, 3.0, 1e5] {
            for k in 0..8 {
                let expected = x.powi(-(k as i32));
                assert!((inverse_power(x, k) - expected).abs() <= 1e-13 * expected);
            }
        }
    }

    #[test]
    fn gamma_at_integers() {
        assert_eq!(gamma_int(1), 1.0);
        assert_eq!(gamma_int(5), 24.0);
        assert_eq!(factorial_u128(34), 295232799039604140847618609643520000000);
    }
}
