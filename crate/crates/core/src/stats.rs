//! Small numerical helpers.

use statrs::distribution::{ContinuousCDF, Normal};

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(p)
}

/// Two-sided exact binomial test of `successes` out of `trials` against
/// probability one half. Returns 1 when `trials` is zero.
pub fn binomial_two_sided_half(successes: usize, trials: usize) -> f64 {
    if trials == 0 {
        return 1.0;
    }
    let tail = successes.min(trials - successes);
    // P(X <= tail) under Binomial(trials, 1/2), accumulated in log space.
    let ln_half_n = -(trials as f64) * std::f64::consts::LN_2;
    let mut ln_choose = 0.0_f64;
    let mut cdf = 0.0;
    for k in 0..=tail {
        if k > 0 {
            ln_choose += ((trials - k + 1) as f64).ln() - (k as f64).ln();
        }
        cdf += (ln_choose + ln_half_n).exp();
    }
    (2.0 * cdf).min(1.0)
}

/// Empirical `p` quantile: the smallest sample value `v` with
/// `#{x <= v} / len >= p` (inverse of the empirical CDF).
pub fn empirical_quantile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..=1.0).contains(&p) {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Some(sorted[rank - 1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_of_standard_normal() {
        assert!((normal_quantile(0.9) - 1.281_551_565_544_6).abs() < 1e-9);
        assert_eq!(normal_quantile(0.5), 0.0);
        assert!((normal_quantile(0.1) + normal_quantile(0.9)).abs() < 1e-12);
    }

    #[test]
    fn binomial_p_values() {
        assert!((binomial_two_sided_half(10, 10) - 2.0 / 1024.0).abs() < 1e-15);
        assert!((binomial_two_sided_half(0, 10) - 2.0 / 1024.0).abs() < 1e-15);
        assert_eq!(binomial_two_sided_half(5, 10), 1.0);
        assert_eq!(binomial_two_sided_half(0, 0), 1.0);
        // 2 * (1 + 10 + 45) / 1024
        assert!((binomial_two_sided_half(2, 10) - 112.0 / 1024.0).abs() < 1e-14);
    }

    #[test]
    fn empirical_quantile_is_inverse_cdf() {
        let v = [5.0, 1.0, 3.0, 2.0, 4.0];
        assert_eq!(empirical_quantile(&v, 0.9), Some(5.0));
        assert_eq!(empirical_quantile(&v, 0.8), Some(4.0));
        assert_eq!(empirical_quantile(&v, 0.0), Some(1.0));
        assert_eq!(empirical_quantile(&[], 0.5), None);
    }
}
