//! Log-space special functions shared by the estimators.

use num_bigint::BigUint;
use num_traits::{ToPrimitive, Zero};
use statrs::function::gamma::ln_gamma;

/// `ln n!` via the log-gamma function; exact table lookup for small `n`.
pub fn ln_factorial(n: u64) -> f64 {
    const SMALL: usize = 32;
    if (n as usize) < SMALL {
        let mut acc = 0.0;
        for i in 2..=n {
            acc += (i as f64).ln();
        }
        return acc;
    }
    ln_gamma(n as f64 + 1.0)
}

/// `ln binom(n, k)`; `-inf` when `k > n`.
pub fn ln_binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    if k == 0 || k == n {
        return 0.0;
    }
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// Natural logarithm of a big integer (`-inf` for zero).
pub fn ln_biguint(x: &BigUint) -> f64 {
    if x.is_zero() {
        return f64::NEG_INFINITY;
    }
    let bits = x.bits();
    if bits <= 1000 {
        return x.to_f64().expect("fits in f64").ln();
    }
    let shift = bits - 64;
    let top = (x >> shift).to_f64().expect("64-bit prefix");
    top.ln() + shift as f64 * std::f64::consts::LN_2
}

/// Decimal string of `exp(log_value)` when it is finite in double precision.
pub fn exp_decimal(log_value: f64) -> Option<String> {
    let v = log_value.exp();
    (v.is_finite() && v > 0.0).then(|| format!("{v}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_traits::One;

    fn ln_binomial_by_primes(n: u64, k: u64) -> f64 {
        // Legendre: exponent of p in n!/(k!(n-k)!) from base-p digit carries.
        let mut sieve = vec![true; n as usize + 1];
        let mut acc = 0.0;
        for p in 2..=n as usize {
            if !sieve[p] {
                continue;
            }
            let mut q = p * p;
            while q <= n as usize {
                sieve[q] = false;
                q += p;
            }
            let leg = |x: u64| {
                let (mut e, mut pk) = (0u64, p as u64);
                while pk <= x {
                    e += x / pk;
                    pk = match pk.checked_mul(p as u64) {
                        Some(v) => v,
                        None => break,
                    };
                }
                e
            };
            let e = leg(n) - leg(k) - leg(n - k);
            if e > 0 {
                acc += e as f64 * (p as f64).ln();
            }
        }
        acc
    }

    #[test]
    fn small_binomials() {
        assert!((ln_binomial(4, 2) - 6f64.ln()).abs() < 1e-14);
        assert!((ln_binomial(16, 8) - 12870f64.ln()).abs() < 1e-13);
        assert_eq!(ln_binomial(3, 4), f64::NEG_INFINITY);
        assert_eq!(ln_binomial(7, 0), 0.0);
    }

    #[test]
    fn log_gamma_against_prime_factorisation() {
        for &(n, k) in &[(100u64, 50u64), (1000, 300), (10_000, 3000), (1_000_000, 300_100)] {
            let exact = ln_binomial_by_primes(n, k);
            let got = ln_binomial(n, k);
            assert!((got - exact).abs() < 1e-12 * exact.max(1.0), "{n} {k}: {got} vs {exact}");
        }
    }

    #[test]
    fn big_integer_log() {
        let mut x = BigUint::one();
        for i in 1..=400u32 {
            x *= i;
        }
        assert!((ln_biguint(&x) - ln_factorial(400)).abs() < 1e-10);
        assert_eq!(ln_biguint(&BigUint::zero()), f64::NEG_INFINITY);
        assert!((ln_biguint(&BigUint::from(90u32)) - 90f64.ln()).abs() < 1e-15);
    }
}
