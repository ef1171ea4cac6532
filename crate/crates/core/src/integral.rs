//! Direct evaluation of the contour integral `I(s, t)` and the integrand bounds.
//!
//! ```text
//! I(s,t) = ∫_{[-π,π]^{m+n}} Π_jk (1 + λ_jk (e^{i(θ_j+φ_k)} - 1))
//!                           / exp(i Σ s_j θ_j + i Σ t_k φ_k) dθ dφ
//! ```
//!
//! so that `B(s, t) = P(s, t) · I(s, t)` with `P` from [`crate::saddle`].

use std::f64::consts::PI;
use std::ops::{Add, Range};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::margins::MarginPair;
use crate::quadrature::{adaptive_simpson, blocked_sum};
use crate::saddle::SaddleSolution;

pub const MAX_EVALUATIONS: u64 = 2_000_000_000;
pub const TRAPEZOID_MAX_DIM: usize = 6;
pub const MONTE_CARLO_MAX_DIM: usize = 12;
const MC_BLOCK: u64 = 1 << 16;
const TRAPEZOID_BLOCK: u64 = 1 << 14;
const VANISHING_FACTOR: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Trapezoid,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntegralEstimate {
    pub value: Complex64,
    pub method: Method,
    /// Product-rule nodes (trapezoid) or samples (Monte Carlo).
    pub points_or_samples: u64,
    /// Trapezoid: change against half resolution plus a rounding floor.
    /// Monte Carlo: three standard errors of the real part.
    pub error_estimate: f64,
}

/// Nodes per angle used when the caller does not choose.
pub fn default_trapezoid_nodes(dims: usize) -> u64 {
    match dims {
        0..=4 => 64,
        5 => 48,
        _ => 32,
    }
}

/// `Π_jk (1 + λ_jk (e^{i(θ_j+φ_k)} - 1))` accumulated as a complex logarithm.
fn log_factor_product(theta: &[f64], phi: &[f64], sol: &SaddleSolution) -> Option<Complex64> {
    let mut acc = Complex64::new(0.0, 0.0);
    for (j, &th) in theta.iter().enumerate() {
        for (k, &ph) in phi.iter().enumerate() {
            let l = sol.lambda_jk.at(j, k);
            let w = Complex64::new(1.0 - l, 0.0) + Complex64::from_polar(l, th + ph);
            let modulus = w.norm();
            if modulus < VANISHING_FACTOR {
                return None;
            }
            acc += Complex64::new(modulus.ln(), w.arg());
        }
    }
    Some(acc)
}

/// The integrand `F(θ, φ)`, evaluated in log space.
pub fn integrand_f(theta: &[f64], phi: &[f64], sol: &SaddleSolution, mp: &MarginPair) -> Complex64 {
    assert_eq!(theta.len(), mp.m());
    assert_eq!(phi.len(), mp.n());
    let Some(log_prod) = log_factor_product(theta, phi, sol) else {
        return Complex64::new(0.0, 0.0);
    };
    let phase: f64 = mp.rows().iter().zip(theta).map(|(&s, th)| s as f64 * th).sum::<f64>()
        + mp.cols().iter().zip(phi).map(|(&t, ph)| t as f64 * ph).sum::<f64>();
    (log_prod - Complex64::new(0.0, phase)).exp()
}

/// Precomputed tables for fast evaluation of `F` on a grid of angles.
///
/// The quadrature loops multiply factors directly instead of going through
/// logarithms; `|F| <= 1` and at most 36 factors are involved, so the product
/// cannot overflow and underflow only affects contributions below `1e-300`.
struct Kernel<'a> {
    m: usize,
    n: usize,
    lambda: &'a [f64],
    s: &'a [u32],
    t: &'a [u32],
}

impl<'a> Kernel<'a> {
    fn new(sol: &'a SaddleSolution, mp: &'a MarginPair) -> Self {
        Kernel { m: mp.m(), n: mp.n(), lambda: &sol.lambda_jk.data, s: mp.rows(), t: mp.cols() }
    }

    /// `F` given `e^{iθ_j}`, `e^{iφ_k}` and the combined phase `e^{-i(Σsθ+Σtφ)}`.
    #[inline]
    fn eval(&self, eth: &[Complex64], eph: &[Complex64], phase: Complex64) -> Complex64 {
        let mut prod = phase;
        for (row, ej) in self.lambda.chunks_exact(self.n).zip(&eth[..self.m]) {
            for (&l, ek) in row.iter().zip(eph) {
                let w = ej * ek;
                prod *= Complex64::new(1.0 - l + l * w.re, l * w.im);
            }
        }
        prod
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    re: f64,
    im: f64,
    re2: f64,
    im2: f64,
}

impl Add for Moments {
    type Output = Moments;
    fn add(self, o: Moments) -> Moments {
        Moments { re: self.re + o.re, im: self.im + o.im, re2: self.re2 + o.re2, im2: self.im2 + o.im2 }
    }
}

fn trapezoid_sum(kernel: &Kernel, nodes: u64) -> Result<(Complex64, u64)> {
    let dims = kernel.m + kernel.n;
    // F is unchanged by θ_j -> θ_j + c, φ_k -> φ_k - c (the margins have equal
    // totals), and shifting by a grid step permutes the grid, so the product
    // rule equals `nodes` times the sum with θ_1 pinned to one node.
    let free = dims as u32 - 1;
    let evals = nodes
        .checked_pow(free)
        .filter(|&e| e <= MAX_EVALUATIONS)
        .ok_or(Error::ResourceLimit { what: "integrand evaluations", used: u64::MAX, limit: MAX_EVALUATIONS })?;
    let step = 2.0 * PI / nodes as f64;
    let unit: Vec<Complex64> = (0..nodes).map(|i| Complex64::from_polar(1.0, -PI + step * i as f64)).collect();
    // per-line phase tables e^{-i s_j x_i}
    let row_phase: Vec<Vec<Complex64>> = kernel
        .s
        .iter()
        .map(|&s| (0..nodes).map(|i| Complex64::from_polar(1.0, -(s as f64) * (-PI + step * i as f64))).collect())
        .collect();
    let col_phase: Vec<Vec<Complex64>> = kernel
        .t
        .iter()
        .map(|&t| (0..nodes).map(|i| Complex64::from_polar(1.0, -(t as f64) * (-PI + step * i as f64))).collect())
        .collect();
    let (m, n) = (kernel.m, kernel.n);
    let block = |range: Range<u64>| -> Complex64 {
        let mut eth = vec![Complex64::new(0.0, 0.0); m];
        let mut eph = vec![Complex64::new(0.0, 0.0); n];
        let mut acc = Complex64::new(0.0, 0.0);
        for idx in range {
            let mut rest = idx;
            let mut phase = row_phase[0][0];
            eth[0] = unit[0];
            for j in 1..m {
                let i = (rest % nodes) as usize;
                rest /= nodes;
                eth[j] = unit[i];
                phase *= row_phase[j][i];
            }
            for k in 0..n {
                let i = (rest % nodes) as usize;
                rest /= nodes;
                eph[k] = unit[i];
                phase *= col_phase[k][i];
            }
            acc += kernel.eval(&eth, &eph, phase);
        }
        acc
    };
    let sum = blocked_sum(evals, TRAPEZOID_BLOCK, block);
    let volume = (2.0 * PI).powi(dims as i32);
    Ok((sum * (volume / evals as f64), evals))
}

fn monte_carlo(kernel: &Kernel, samples: u64, seed: u64) -> IntegralEstimate {
    let (m, n) = (kernel.m, kernel.n);
    let block = |range: Range<u64>| -> Moments {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(range.start / MC_BLOCK);
        let mut eth = vec![Complex64::new(0.0, 0.0); m];
        let mut eph = vec![Complex64::new(0.0, 0.0); n];
        let mut acc = Moments::default();
        for _ in range {
            let mut phase_angle = 0.0;
            for (e, &sj) in eth.iter_mut().zip(kernel.s) {
                let th: f64 = rng.random_range(-PI..PI);
                *e = Complex64::from_polar(1.0, th);
                phase_angle += sj as f64 * th;
            }
            for (e, &tk) in eph.iter_mut().zip(kernel.t) {
                let ph: f64 = rng.random_range(-PI..PI);
                *e = Complex64::from_polar(1.0, ph);
                phase_angle += tk as f64 * ph;
            }
            let f = kernel.eval(&eth, &eph, Complex64::from_polar(1.0, -phase_angle));
            acc = acc + Moments { re: f.re, im: f.im, re2: f.re * f.re, im2: f.im * f.im };
        }
        acc
    };
    let tot = blocked_sum(samples, MC_BLOCK, block);
    let count = samples as f64;
    let volume = (2.0 * PI).powi((m + n) as i32);
    let (mean_re, mean_im) = (tot.re / count, tot.im / count);
    let var_re = (tot.re2 / count - mean_re * mean_re).max(0.0);
    let var_im = (tot.im2 / count - mean_im * mean_im).max(0.0);
    let sigma = volume * (var_re.max(var_im) / count).sqrt();
    IntegralEstimate {
        value: Complex64::new(mean_re, mean_im) * volume,
        method: Method::MonteCarlo,
        points_or_samples: samples,
        error_estimate: 3.0 * sigma,
    }
}

/// Estimate `I(s, t)`.
///
/// `resolution` is nodes per angle for the trapezoid rule (even, at least 4)
/// and the sample count for Monte Carlo; `seed` only affects Monte Carlo.
pub fn integrate_i(
    mp: &MarginPair,
    sol: &SaddleSolution,
    method: Method,
    resolution: u64,
    seed: u64,
) -> Result<IntegralEstimate> {
    let dims = mp.m() + mp.n();
    if sol.m != mp.m() || sol.n != mp.n() {
        return Err(Error::DomainError("saddle solution does not match the instance".into()));
    }
    let kernel = Kernel::new(sol, mp);
    match method {
        Method::Trapezoid => {
            if dims > TRAPEZOID_MAX_DIM {
                return Err(Error::DomainError(format!("trapezoid rule needs m + n <= 6, got {dims}")));
            }
            if resolution < 4 || !resolution.is_multiple_of(2) {
                return Err(Error::DomainError("trapezoid resolution must be even and >= 4".into()));
            }
            let (fine, _) = trapezoid_sum(&kernel, resolution)?;
            let (coarse, _) = trapezoid_sum(&kernel, resolution / 2)?;
            let volume = (2.0 * PI).powi(dims as i32);
            let floor = 1e-13 * volume;
            Ok(IntegralEstimate {
                value: fine,
                method,
                points_or_samples: resolution.pow(dims as u32),
                error_estimate: (fine - coarse).norm() + floor,
            })
        }
        Method::MonteCarlo => {
            if dims > MONTE_CARLO_MAX_DIM {
                return Err(Error::DomainError(format!("Monte Carlo needs m + n <= 12, got {dims}")));
            }
            if resolution < 2 {
                return Err(Error::DomainError("need at least two samples".into()));
            }
            if resolution > MAX_EVALUATIONS {
                return Err(Error::ResourceLimit {
                    what: "integrand evaluations",
                    used: resolution,
                    limit: MAX_EVALUATIONS,
                });
            }
            Ok(monte_carlo(&kernel, resolution, seed))
        }
    }
}

/// `f_jk(z) = sqrt(1 - 4 A_jk (1 - cos z))`.
pub fn f_jk(big_a: f64, z: f64) -> f64 {
    (1.0 - 4.0 * big_a * (1.0 - z.cos())).max(0.0).sqrt()
}

/// Check `f_jk(z) <= exp(-A_jk z^2 + A_jk z^4 / 12)` for every sample and cell,
/// and `|F(θ, φ)| = Π f_jk(θ_j + φ_k)` on pseudo-random angle tuples.
pub fn fbnd_check(sol: &SaddleSolution, z_samples: &[f64]) -> bool {
    let bound_ok = z_samples.iter().all(|&z| {
        sol.big_a_jk.data.iter().all(|&a| f_jk(a, z) <= (-a * z * z + a * z.powi(4) / 12.0).exp() + 1e-12)
    });
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_f00d);
    let modulus_ok = (0..64).all(|_| {
        let theta: Vec<f64> = (0..sol.m).map(|_| rng.random_range(-PI..PI)).collect();
        let phi: Vec<f64> = (0..sol.n).map(|_| rng.random_range(-PI..PI)).collect();
        let product: f64 = (0..sol.m)
            .flat_map(|j| (0..sol.n).map(move |k| (j, k)))
            .map(|(j, k)| f_jk(sol.big_a_jk.at(j, k), theta[j] + phi[k]))
            .product();
        let modulus = log_factor_product(&theta, &phi, sol).map_or(0.0, |l| l.re.exp());
        // both sides lose relative accuracy near a vanishing factor; |F| <= 1
        (modulus - product).abs() <= 1e-12
    });
    bound_ok && modulus_ok
}

/// One evaluation of the inequality
/// `∫_{-8π/75}^{8π/75} exp(c(-x^2 + 7x^4/3)) dx <= sqrt(π/c) exp(3/c)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IbndOutcome {
    pub c: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

pub fn ibnd_evaluate(c: f64) -> Result<IbndOutcome> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::DomainError(format!("c must be positive, got {c}")));
    }
    let edge = 8.0 * PI / 75.0;
    let rhs = (PI / c).sqrt() * (3.0 / c).exp();
    let lhs = adaptive_simpson(|x| (c * (-x * x + 7.0 / 3.0 * x.powi(4))).exp(), -edge, edge, 1e-12 * rhs);
    Ok(IbndOutcome { c, lhs, rhs, holds: lhs <= rhs })
}

pub fn ibnd_check(c_values: &[f64]) -> Result<bool> {
    let mut all = true;
    for &c in c_values {
        all &= ibnd_evaluate(c)?.holds;
    }
    Ok(all)
}
