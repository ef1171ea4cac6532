//! Dense-case asymptotic formula for `B(s, t)`.
//!
//! The estimate factors as `N · P1 · P2 · E` where `N = binom(mn, λmn)` counts
//! matrices with the right number of ones, `P1 = N^-1 Π binom(n, s_j)` and
//! `P2 = N^-1 Π binom(m, t_k)` are the probabilities of the row and column
//! events, and `E = exp(-½ (1 - R/(2Amn)) (1 - C/(2Amn)))` measures their
//! dependence. The vanishing error term of the formula is dropped.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::One;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::margins::{check_applicability, compute_stats, to_f64, MarginPair};
use crate::special::ln_binomial;

/// Density exponent `a` used for the applicability warning.
pub const WARNING_DENSITY_A: f64 = 0.25;
/// Deviation exponent `eps` used for the applicability warning.
pub const WARNING_EPS: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogEstimate {
    pub log_value: f64,
    pub log_n: f64,
    pub log_p1: f64,
    pub log_p2: f64,
    pub log_e: f64,
    /// `-½ (1 - R/(2Amn)) (1 - C/(2Amn))`, computed exactly then rounded.
    pub e_exponent: f64,
    /// The instance fails the density condition at `a = WARNING_DENSITY_A`.
    pub density_warning: bool,
}

pub fn estimate_log_count(mp: &MarginPair) -> Result<LogEstimate> {
    let stats = compute_stats(mp);
    stats.require_nondegenerate()?;
    let (m, n) = (mp.m() as u64, mp.n() as u64);
    let log_n = ln_binomial(m * n, mp.total());
    let rows: f64 = mp.rows().iter().map(|&s| ln_binomial(n, s as u64)).sum();
    let cols: f64 = mp.cols().iter().map(|&t| ln_binomial(m, t as u64)).sum();
    let log_p1 = rows - log_n;
    let log_p2 = cols - log_n;

    let one = BigRational::one();
    let scale = &stats.a * BigRational::from_integer(BigInt::from(2 * m * n));
    let exponent = -(&one - stats.big_r() / &scale) * (&one - stats.big_c() / &scale)
        / BigRational::from_integer(BigInt::from(2));
    let e_exponent = to_f64(&exponent);
    let log_e = e_exponent;

    let report = check_applicability(&stats, WARNING_DENSITY_A, WARNING_EPS)?;
    Ok(LogEstimate {
        log_value: log_n + log_p1 + log_p2 + log_e,
        log_n,
        log_p1,
        log_p2,
        log_e,
        e_exponent,
        density_warning: !report.density_ok,
    })
}

/// Log of the Stirling-type expansion of `binom(N, (x+d)N)` with all displayed
/// correction terms and no remainder, `X = x(1-x)/2`.
pub fn stirling_binom(big_n: u64, x: f64, d: f64) -> Result<f64> {
    if big_n == 0 || !(x > 0.0 && x < 1.0) || !(x + d > 0.0 && x + d < 1.0) {
        return Err(Error::DomainError(format!(
            "need N > 0, 0 < x < 1 and 0 < x + d < 1 (N = {big_n}, x = {x}, d = {d})"
        )));
    }
    let nn = big_n as f64;
    let xx = 0.5 * x * (1.0 - x);
    let lead = -nn * ((x + d) * x.ln() + (1.0 - x - d) * (-x).ln_1p());
    let norm = -(2.0 * (std::f64::consts::PI * xx * nn).sqrt()).ln();
    let skew = 1.0 - 2.0 * x;
    let corr = -(1.0 - 2.0 * xx) / (24.0 * xx * nn) - d * d * nn / (4.0 * xx) - skew * d / (4.0 * xx)
        + (1.0 - 4.0 * xx) * d * d / (16.0 * xx * xx)
        + skew * d.powi(3) * nn / (24.0 * xx * xx)
        - (1.0 - 6.0 * xx) * d.powi(4) * nn / (96.0 * xx.powi(3));
    Ok(lead + norm + corr)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_by_four_two() {
        let est = estimate_log_count(&MarginPair::semiregular(4, 2, 4, 2).unwrap()).unwrap();
        let want = (6f64.powi(8) / 12870.0).ln() - 0.5;
        assert!((est.log_value - want).abs() < 1e-12);
        assert!((est.log_value.exp() - 79.16).abs() < 0.01);
        assert_eq!(est.log_e, -0.5);
    }

    #[test]
    fn e_vanishes_when_r_equals_2amn() {
        // m=2, n=4, λ=1/2: 2Amn = 2 and R = (3-2)^2 + (1-2)^2 = 2
        let mp = MarginPair::new(vec![3, 1], vec![1, 1, 1, 1]).unwrap();
        let est = estimate_log_count(&mp).unwrap();
        assert_eq!(est.e_exponent, 0.0);
        assert_eq!(est.log_e, 0.0);
    }

    #[test]
    fn decomposition_bookkeeping() {
        let mp = MarginPair::new(vec![3, 1, 2, 2, 4], vec![2, 3, 3, 2, 2]).unwrap();
        let e = estimate_log_count(&mp).unwrap();
        assert!((e.log_value - (e.log_n + e.log_p1 + e.log_p2 + e.log_e)).abs() < 1e-12);
    }

    #[test]
    fn degenerate() {
        assert_eq!(
            estimate_log_count(&MarginPair::semiregular(3, 3, 3, 3).unwrap()),
            Err(Error::DegenerateDensity)
        );
        assert_eq!(
            estimate_log_count(&MarginPair::semiregular(3, 0, 3, 0).unwrap()),
            Err(Error::DegenerateDensity)
        );
    }

    #[test]
    fn density_warning_flag() {
        let skewed = MarginPair::semiregular(10, 1, 10, 1).unwrap();
        assert!(estimate_log_count(&skewed).unwrap().density_warning);
        let half = MarginPair::semiregular(10, 5, 10, 5).unwrap();
        assert!(!estimate_log_count(&half).unwrap().density_warning);
    }

    #[test]
    fn stirling_symmetric_at_zero_offset() {
        let a = stirling_binom(500, 0.3, 0.0).unwrap();
        let b = stirling_binom(500, 0.7, 0.0).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn stirling_domain() {
        assert!(stirling_binom(10, 0.0, 0.0).is_err());
        assert!(stirling_binom(10, 0.5, 0.6).is_err());
        assert!(stirling_binom(0, 0.5, 0.0).is_err());
    }

    #[test]
    fn stirling_half() {
        let got = stirling_binom(100, 0.5, 0.0).unwrap();
        assert!((got - ln_binomial(100, 50)).abs() < 1e-5);
    }
}
