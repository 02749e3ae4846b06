//! Small statistics kit for Monte-Carlo comparisons.

use alloc::vec::Vec;

/// Gaussian tail `Q(x) = P(Z > x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / core::f64::consts::SQRT_2)
}

pub fn db_to_linear(db: f64) -> f64 {
    libm::pow(10.0, db / 10.0)
}

pub fn linear_to_db(x: f64) -> f64 {
    10.0 * libm::log10(x)
}

/// Normal-approximation standard error of a binomial proportion.
pub fn binomial_stderr(p: f64, trials: u64) -> f64 {
    if trials == 0 {
        return 0.0;
    }
    libm::sqrt(p * (1.0 - p) / trials as f64)
}

/// An error-rate estimate `errors / trials`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proportion {
    pub errors: u64,
    pub trials: u64,
}

impl Proportion {
    pub fn new(errors: u64, trials: u64) -> Self {
        Self { errors, trials }
    }

    pub fn rate(&self) -> f64 {
        if self.trials == 0 {
            0.0
        } else {
            self.errors as f64 / self.trials as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        binomial_stderr(self.rate(), self.trials)
    }

    /// `true` unless `self` exceeds `other` by more than `k` standard errors
    /// of the difference.
    pub fn not_worse_than(&self, other: &Proportion, k: f64) -> bool {
        let diff = self.rate() - other.rate();
        let se = libm::sqrt(self.stderr().powi(2) + other.stderr().powi(2));
        diff <= k * se
    }
}

/// One-sided sign test: probability of at least `successes` wins among
/// `successes + failures` fair coin flips. Ties are dropped by the caller.
pub fn sign_test_p_value(successes: u64, failures: u64) -> f64 {
    let n = successes + failures;
    if n == 0 {
        return 1.0;
    }
    // sum_{k >= successes} C(n, k) / 2^n, in log space
    let ln_half_n = n as f64 * core::f64::consts::LN_2;
    let mut total = 0.0;
    for k in successes..=n {
        total += libm::exp(ln_choose(n, k) - ln_half_n);
    }
    total.min(1.0)
}

fn ln_choose(n: u64, k: u64) -> f64 {
    libm::lgamma(n as f64 + 1.0) - libm::lgamma(k as f64 + 1.0) - libm::lgamma((n - k) as f64 + 1.0)
}

/// Median of a non-empty slice (mean of the two middle values for even length).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn q_function_values() {
        assert!((q_function(0.0) - 0.5).abs() < 1e-15);
        // Q(sqrt(8)) for BPSK at 4 in linear Eb/N0
        assert!((q_function(libm::sqrt(8.0)) - 2.3389e-3).abs() < 1e-6);
    }

    #[test]
    fn sign_test_tail() {
        assert!((sign_test_p_value(5, 0) - 1.0 / 32.0).abs() < 1e-12);
        assert!((sign_test_p_value(0, 4) - 1.0).abs() < 1e-12);
        assert!((sign_test_p_value(2, 2) - 11.0 / 16.0).abs() < 1e-12);
        assert_eq!(sign_test_p_value(0, 0), 1.0);
    }

    #[test]
    fn proportion_comparison() {
        let a = Proportion::new(100, 10_000);
        let b = Proportion::new(110, 10_000);
        assert!(a.not_worse_than(&b, 3.0));
        assert!(b.not_worse_than(&a, 3.0));
        let c = Proportion::new(300, 10_000);
        assert!(!c.not_worse_than(&a, 3.0));
        assert!(Proportion::new(0, 10).not_worse_than(&Proportion::new(0, 10), 3.0));
    }

    #[test]
    fn median_odd_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}
