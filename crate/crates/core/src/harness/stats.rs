//! Exact binomial confidence intervals.

use statrs::function::beta::beta_reg;

/// Quantile of Beta(a, b) by bisection on the regularized incomplete beta.
fn beta_quantile(p: f64, a: f64, b: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if beta_reg(a, b, mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Unrounded Clopper-Pearson two-sided 95% interval as proportions.
/// Panics if `successes > total` or `total == 0`.
pub fn clopper_pearson(successes: u64, total: u64) -> (f64, f64) {
    assert!(total >= 1 && successes <= total, "need 0 <= successes <= total, total >= 1");
    let (x, n) = (successes as f64, total as f64);
    let alpha = 0.05;
    let low = if successes == 0 { 0.0 } else { beta_quantile(alpha / 2.0, x, n - x + 1.0) };
    let high = if successes == total { 1.0 } else { beta_quantile(1.0 - alpha / 2.0, x + 1.0, n - x) };
    (low, high)
}

pub fn round_tenth(v: f64) -> f64 {
    (v * 10.0).round() / 10.0
}

/// Clopper-Pearson 95% interval in percent, rounded to 0.1.
pub fn binomial_ci95(successes: u64, total: u64) -> (f64, f64) {
    let (low, high) = clopper_pearson(successes, total);
    (round_tenth(100.0 * low), round_tenth(100.0 * high))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct binomial tail sums, independent of the beta function.
    fn tail_ge(x: u64, n: u64, p: f64) -> f64 {
        (x..=n).map(|k| binom(n, k) * p.powi(k as i32) * (1.0 - p).powi((n - k) as i32)).sum()
    }

    fn binom(n: u64, k: u64) -> f64 {
        (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
    }

    #[test]
    fn closed_forms() {
        assert_eq!(binomial_ci95(0, 1), (0.0, 97.5));
        assert_eq!(binomial_ci95(1, 1), (2.5, 100.0));
        // x = 0: upper bound solves (1 - p)^n = 0.025.
        let (_, hi) = clopper_pearson(0, 10);
        assert!((hi - (1.0 - 0.025f64.powf(0.1))).abs() < 1e-9);
    }

    #[test]
    fn bounds_match_binomial_tails() {
        for (x, n) in [(3, 17), (28, 56), (10, 12)] {
            let (lo, hi) = clopper_pearson(x, n);
            assert!((tail_ge(x, n, lo) - 0.025).abs() < 1e-9);
            assert!((1.0 - tail_ge(x + 1, n, hi) - 0.025).abs() < 1e-9);
        }
    }

    #[test]
    fn interval_contains_point_estimate() {
        for n in 1..40u64 {
            for x in 0..=n {
                let (lo, hi) = clopper_pearson(x, n);
                let p = x as f64 / n as f64;
                assert!(lo <= p && p <= hi);
            }
        }
    }
}
