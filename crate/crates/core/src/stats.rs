//! Small statistical helpers: sample moments and the matched-pairs t-test.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Mean and standard error of a sample.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Result of a matched-pairs t-test on differences `d_i = a_i − b_i`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairedTTest {
    pub n: usize,
    pub mean_diff: f64,
    pub se_diff: f64,
    pub t_stat: f64,
    /// One-sided p-value for `H1: E(a − b) > 0`.
    pub p_greater: f64,
    /// One-sided p-value for `H1: E(a − b) < 0`.
    pub p_less: f64,
    /// Set when every difference is identical, so no t statistic exists.
    pub degenerate: bool,
}

pub fn paired_t_test(a: &[f64], b: &[f64]) -> PairedTTest {
    assert_eq!(a.len(), b.len(), "paired samples must have equal length");
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (mean, se) = mean_se(&d);
    let n = d.len();
    if n < 2 || !(se > 0.0) {
        let (p_greater, p_less) = if mean > 0.0 {
            (0.0, 1.0)
        } else if mean < 0.0 {
            (1.0, 0.0)
        } else {
            (1.0, 1.0)
        };
        return PairedTTest {
            n,
            mean_diff: mean,
            se_diff: se,
            t_stat: f64::NAN,
            p_greater,
            p_less,
            degenerate: true,
        };
    }
    let t = mean / se;
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("positive degrees of freedom");
    PairedTTest {
        n,
        mean_diff: mean,
        se_diff: se,
        t_stat: t,
        p_greater: dist.sf(t),
        p_less: dist.cdf(t),
        degenerate: false,
    }
}

/// Two-sided Student-t confidence interval for the mean.
pub fn t_interval(xs: &[f64], level: f64) -> (f64, f64) {
    let (mean, se) = mean_se(xs);
    if xs.len() < 2 {
        return (mean, mean);
    }
    let dist = StudentsT::new(0.0, 1.0, (xs.len() - 1) as f64).expect("positive degrees of freedom");
    let q = dist.inverse_cdf(0.5 + level / 2.0);
    (mean - q * se, mean + q * se)
}

/// Pearson correlation.
pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_test_against_hand_computation() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [0.5, 1.0, 2.0, 3.0];
        let t = paired_t_test(&a, &b);
        // differences 0.5, 1, 1, 1: mean 0.875, sd 0.25, se 0.125, t = 7 on 3 df.
        assert!((t.mean_diff - 0.875).abs() < 1e-15);
        assert!((t.t_stat - 7.0).abs() < 1e-12);
        assert!((t.p_greater - 0.002_993_128).abs() < 1e-8);
        assert!((t.p_greater + t.p_less - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_differences_are_flagged() {
        let t = paired_t_test(&[1.0, 1.0], &[1.0, 1.0]);
        assert!(t.degenerate);
        assert_eq!(t.mean_diff, 0.0);
    }

    #[test]
    fn interval_contains_mean() {
        let (lo, hi) = t_interval(&[1.0, 2.0, 3.0], 0.95);
        assert!(lo < 2.0 && hi > 2.0);
        // t_{0.975,2} = 4.302653, se = 1/√3.
        assert!((hi - 2.0 - 4.302_653 / 3f64.sqrt()).abs() < 1e-5);
    }
}
