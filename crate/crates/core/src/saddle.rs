//! Saddle point of the generating-function integral.
//!
//! The radii are written `q_j = r(1+a_j)/(1-r^2 a_j)` and
//! `r_k = r(1+b_k)/(1-r^2 b_k)` with `r = sqrt(λ/(1-λ))`, so that
//! `λ_jk/λ = 1 + a_j + b_k + Z_jk`. The saddle equations `λ_j· = s_j`,
//! `λ_·k = t_k` together with the gauge `n Σa = m Σb` are solved by the
//! fixed-point map
//!
//! ```text
//! a_j <- (s_j - s)/(λn) - Z_j·/n + Z_··/(2mn)
//! b_k <- (t_k - t)/(λm) - Z_·k/m + Z_··/(2mn)
//! ```
//!
//! started from `a = b = 0`, using the exact rational form of `Z_jk`.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::margins::{compute_stats, MarginPair, MarginStats};
use crate::special::ln_binomial;

pub const DEFAULT_TOL: f64 = 1e-13;
pub const DEFAULT_MAX_ITER: usize = 200;
const BLOWUP_GUARD: f64 = 1e-9;
const IDENTITY_TOL: f64 = 1e-8;

/// Dense row-major `m x n` array of reals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..rows {
            for k in 0..cols {
                data.push(f(j, k));
            }
        }
        Grid { rows, cols, data }
    }

    #[inline]
    pub fn at(&self, j: usize, k: usize) -> f64 {
        self.data[j * self.cols + k]
    }

    pub fn row_sum(&self, j: usize) -> f64 {
        self.data[j * self.cols..(j + 1) * self.cols].iter().sum()
    }

    pub fn col_sum(&self, k: usize) -> f64 {
        (0..self.rows).map(|j| self.at(j, k)).sum()
    }

    pub fn max_abs_diff(&self, other: &Grid) -> f64 {
        self.data.iter().zip(&other.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SaddleConfig {
    /// Stop when the max-norm change of `(a, b)` drops below this.
    pub tol: f64,
    pub max_iter: usize,
    /// When the plain iteration fails, retry with step factor 1/2 and then
    /// with Newton's method on the dual.
    pub damped_fallback: bool,
}

impl Default for SaddleConfig {
    fn default() -> Self {
        SaddleConfig { tol: DEFAULT_TOL, max_iter: DEFAULT_MAX_ITER, damped_fallback: true }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SaddleSolution {
    pub m: usize,
    pub n: usize,
    pub lambda: f64,
    /// `sqrt(λ/(1-λ))`.
    pub r: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub q: Vec<f64>,
    /// Column radii `r_k`.
    pub rr: Vec<f64>,
    pub lambda_jk: Grid,
    /// `A_jk = λ_jk(1-λ_jk)/2`.
    pub big_a_jk: Grid,
    pub alpha_jk: Grid,
    pub beta_jk: Grid,
    pub gamma_jk: Grid,
    pub a_const: f64,
    pub a3_const: f64,
    pub a4_const: f64,
    pub iterations: usize,
    /// `max(max_j |λ_j· - s_j|, max_k |λ_·k - t_k|)`.
    pub residual: f64,
    /// `|n Σa - m Σb| / (mn)`.
    pub gauge_defect: f64,
    /// Max-norm change of the final step.
    pub last_change: f64,
    pub damped: bool,
    /// Found by the Newton fallback after both fixed-point runs failed.
    pub newton: bool,
}

/// Scalar constants of the map, in double precision.
#[derive(Debug, Clone, Copy)]
struct MapConsts {
    lambda: f64,
    r2: f64,
    sbar: f64,
    tbar: f64,
}

impl MapConsts {
    fn new(stats: &MarginStats) -> Self {
        let lambda = stats.lambda_f64();
        MapConsts { lambda, r2: lambda / (1.0 - lambda), sbar: stats.sbar_f64(), tbar: stats.tbar_f64() }
    }
}

/// `Z_jk` from its exact rational form.
#[inline]
pub fn z_exact(a: f64, b: f64, r2: f64) -> f64 {
    a * b * (1.0 - r2 - r2 * a - r2 * b) / (1.0 + r2 * a * b)
}

fn map_once(mp: &MarginPair, c: &MapConsts, a: &[f64], b: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let (m, n) = (mp.m(), mp.n());
    let mut z_row = vec![0.0; m];
    let mut z_col = vec![0.0; n];
    for (j, &aj) in a.iter().enumerate() {
        for (k, &bk) in b.iter().enumerate() {
            let den = 1.0 + c.r2 * aj * bk;
            if den.abs() < BLOWUP_GUARD || !den.is_finite() {
                return Err(Error::NumericalBlowup(format!("1 + r^2 a_{j} b_{k} = {den:e}")));
            }
            let z = z_exact(aj, bk, c.r2);
            z_row[j] += z;
            z_col[k] += z;
        }
    }
    let z_all: f64 = z_row.iter().sum();
    let (mf, nf) = (m as f64, n as f64);
    let shift = z_all / (2.0 * mf * nf);
    let new_a = mp
        .rows()
        .iter()
        .zip(&z_row)
        .map(|(&s, zr)| (s as f64 - c.sbar) / (c.lambda * nf) - zr / nf + shift)
        .collect();
    let new_b = mp
        .cols()
        .iter()
        .zip(&z_col)
        .map(|(&t, zc)| (t as f64 - c.tbar) / (c.lambda * mf) - zc / mf + shift)
        .collect();
    Ok((new_a, new_b))
}

/// One application of the fixed-point map `(a, b) -> (𝔸(a, b), 𝔹(a, b))`.
pub fn fixed_point_map(mp: &MarginPair, a: &[f64], b: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let stats = compute_stats(mp);
    stats.require_nondegenerate()?;
    map_once(mp, &MapConsts::new(&stats), a, b)
}

fn max_change(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

struct Iterate {
    a: Vec<f64>,
    b: Vec<f64>,
    iterations: usize,
    last_change: f64,
}

fn iterate(mp: &MarginPair, c: &MapConsts, cfg: &SaddleConfig, step: f64) -> Result<Iterate> {
    let mut a = vec![0.0; mp.m()];
    let mut b = vec![0.0; mp.n()];
    let mut last_change = f64::INFINITY;
    for it in 1..=cfg.max_iter {
        let (ta, tb) = map_once(mp, c, &a, &b)?;
        let na: Vec<f64> = a.iter().zip(&ta).map(|(x, t)| x + step * (t - x)).collect();
        let nb: Vec<f64> = b.iter().zip(&tb).map(|(x, t)| x + step * (t - x)).collect();
        last_change = max_change(&na, &a).max(max_change(&nb, &b));
        if !last_change.is_finite() {
            return Err(Error::NumericalBlowup("iterate left the finite range".into()));
        }
        a = na;
        b = nb;
        if last_change < cfg.tol {
            return Ok(Iterate { a, b, iterations: it, last_change });
        }
    }
    Err(Error::NonConvergence { iterations: cfg.max_iter, last_change })
}

pub fn solve_saddle(mp: &MarginPair, tol: f64, max_iter: usize) -> Result<SaddleSolution> {
    solve_saddle_with(mp, &SaddleConfig { tol, max_iter, ..Default::default() })
}

pub fn solve_saddle_with(mp: &MarginPair, cfg: &SaddleConfig) -> Result<SaddleSolution> {
    if cfg.tol.is_nan() || cfg.tol <= 0.0 {
        return Err(Error::DomainError("tolerance must be positive".into()));
    }
    mp.require_strict()?;
    let stats = compute_stats(mp);
    let consts = MapConsts::new(&stats);
    let (found, damped, newton) = match iterate(mp, &consts, cfg, 1.0) {
        Ok(it) => (it, false, false),
        Err(err @ (Error::NonConvergence { .. } | Error::NumericalBlowup(_))) if cfg.damped_fallback => {
            match iterate(mp, &consts, cfg, 0.5) {
                Ok(it) => (it, true, false),
                Err(_) => match newton_dual(mp, &consts, cfg) {
                    Ok(it) => (it, false, true),
                    Err(_) => return Err(err),
                },
            }
        }
        Err(err) => return Err(err),
    };
    build_solution(mp, &stats, found, damped, newton)
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Solve `h x = g` in place by Gaussian elimination with partial pivoting.
fn solve_dense(mut h: Vec<Vec<f64>>, mut g: Vec<f64>) -> Option<Vec<f64>> {
    let d = g.len();
    for col in 0..d {
        let piv = (col..d).max_by(|&i, &j| h[i][col].abs().total_cmp(&h[j][col].abs()))?;
        if h[piv][col].abs() < 1e-300 {
            return None;
        }
        h.swap(col, piv);
        g.swap(col, piv);
        for row in col + 1..d {
            let f = h[row][col] / h[col][col];
            if f != 0.0 {
                let (top, bottom) = h.split_at_mut(row);
                for (x, y) in bottom[0][col..d].iter_mut().zip(&top[col][col..d]) {
                    *x -= f * y;
                }
                g[row] -= f * g[col];
            }
        }
    }
    let mut x = vec![0.0; d];
    for row in (0..d).rev() {
        let tail: f64 = (row + 1..d).map(|k| h[row][k] * x[k]).sum();
        x[row] = (g[row] - tail) / h[row][row];
    }
    Some(x)
}

/// Damped Newton on the convex dual `Σ log(1 + q_j r_k) - Σ s_j log q_j - Σ t_k log r_k`
/// in `(log q, log r)`, for margins where the fixed-point map does not contract.
/// The last column radius is held fixed during the solve and the gauge is
/// restored afterwards.
fn newton_dual(mp: &MarginPair, c: &MapConsts, cfg: &SaddleConfig) -> Result<Iterate> {
    let (m, n) = (mp.m(), mp.n());
    let (s, t) = (mp.rows(), mp.cols());
    let start = c.r2.sqrt().ln();
    let mut x = vec![start; m];
    let mut y = vec![start; n];
    let objective = |x: &[f64], y: &[f64]| {
        let mut v = 0.0;
        for (j, &xj) in x.iter().enumerate() {
            for &yk in y {
                v += softplus(xj + yk);
            }
            v -= s[j] as f64 * xj;
        }
        v - t.iter().zip(y).map(|(&tk, yk)| tk as f64 * yk).sum::<f64>()
    };
    let dim = m + n - 1;
    let mut iterations = 0;
    let mut last_change = f64::INFINITY;
    loop {
        let l = Grid::from_fn(m, n, |j, k| logistic(x[j] + y[k]));
        let mut grad = vec![0.0; dim];
        let mut hess = vec![vec![0.0; dim]; dim];
        for j in 0..m {
            grad[j] = l.row_sum(j) - s[j] as f64;
            for k in 0..n {
                let w = l.at(j, k) * (1.0 - l.at(j, k));
                hess[j][j] += w;
                if k < n - 1 {
                    hess[m + k][m + k] += w;
                    hess[j][m + k] = w;
                    hess[m + k][j] = w;
                }
            }
        }
        for k in 0..n - 1 {
            grad[m + k] = l.col_sum(k) - t[k] as f64;
        }
        let residual = grad.iter().fold(0.0f64, |acc, g| acc.max(g.abs()));
        if residual < 1e-13 || (last_change < cfg.tol && residual < 1e-9) {
            break;
        }
        if last_change < cfg.tol {
            return Err(Error::NonConvergence { iterations, last_change });
        }
        if iterations == cfg.max_iter {
            return Err(Error::NonConvergence { iterations, last_change });
        }
        let step = solve_dense(hess, grad).ok_or_else(|| Error::NumericalBlowup("singular Newton system".into()))?;
        let f0 = objective(&x, &y);
        let mut scale = 1.0;
        let (nx, ny) = loop {
            let nx: Vec<f64> = x.iter().zip(&step).map(|(v, d)| v - scale * d).collect();
            let mut ny = y.clone();
            for k in 0..n - 1 {
                ny[k] -= scale * step[m + k];
            }
            if objective(&nx, &ny) <= f0 + 1e-12 * f0.abs() || scale < 1e-10 {
                break (nx, ny);
            }
            scale *= 0.5;
        };
        last_change = step.iter().fold(0.0f64, |acc, d| acc.max((scale * d).abs()));
        x = nx;
        y = ny;
        iterations += 1;
    }
    // (q, r) -> (e^g q, e^-g r) leaves every λ_jk unchanged; pick g to satisfy
    // n Σa = m Σb, which is increasing in g.
    let r = c.r2.sqrt();
    let offset = |v: f64| {
        let q = v.exp();
        (q - r) / (r * (1.0 + q * r))
    };
    let gauge = |g: f64| {
        let sa: f64 = x.iter().map(|&v| offset(v + g)).sum();
        let sb: f64 = y.iter().map(|&v| offset(v - g)).sum();
        n as f64 * sa - m as f64 * sb
    };
    let (mut lo, mut hi) = (-1.0, 1.0);
    while gauge(lo) > 0.0 {
        lo *= 2.0;
    }
    while gauge(hi) < 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gauge(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let g = 0.5 * (lo + hi);
    Ok(Iterate {
        a: x.iter().map(|&v| offset(v + g)).collect(),
        b: y.iter().map(|&v| offset(v - g)).collect(),
        iterations,
        last_change,
    })
}

fn build_solution(
    mp: &MarginPair,
    stats: &MarginStats,
    it: Iterate,
    damped: bool,
    newton: bool,
) -> Result<SaddleSolution> {
    let (m, n) = (mp.m(), mp.n());
    let lambda = stats.lambda_f64();
    let r2 = lambda / (1.0 - lambda);
    let r = r2.sqrt();
    let radius = |x: f64| -> Result<f64> {
        let den = 1.0 - r2 * x;
        let v = r * (1.0 + x) / den;
        if den <= 0.0 || v.is_nan() || v <= 0.0 || !v.is_finite() {
            return Err(Error::NumericalBlowup(format!("radius for offset {x} is {v}")));
        }
        Ok(v)
    };
    let q = it.a.iter().map(|&x| radius(x)).collect::<Result<Vec<_>>>()?;
    let rr = it.b.iter().map(|&x| radius(x)).collect::<Result<Vec<_>>>()?;
    let lambda_jk = Grid::from_fn(m, n, |j, k| {
        let p = q[j] * rr[k];
        p / (1.0 + p)
    });
    if let Some(bad) = lambda_jk.data.iter().find(|&&l| !(l > 0.0 && l < 1.0)) {
        return Err(Error::NumericalBlowup(format!("λ_jk = {bad} outside (0, 1)")));
    }
    let a_const = stats.a_f64();
    let a3_const = stats.a3_f64();
    let a4_const = stats.a4_f64();
    let big_a_jk = Grid::from_fn(m, n, |j, k| {
        let l = lambda_jk.at(j, k);
        0.5 * l * (1.0 - l)
    });
    let alpha_jk = Grid::from_fn(m, n, |j, k| big_a_jk.at(j, k) - a_const);
    let beta_jk = Grid::from_fn(m, n, |j, k| {
        let l = lambda_jk.at(j, k);
        l * (1.0 - l) * (1.0 - 2.0 * l) / 6.0 - a3_const
    });
    let gamma_jk = Grid::from_fn(m, n, |j, k| {
        let l = lambda_jk.at(j, k);
        l * (1.0 - l) * (1.0 - 6.0 * l + 6.0 * l * l) / 24.0 - a4_const
    });
    let row_def = (0..m).map(|j| (lambda_jk.row_sum(j) - mp.rows()[j] as f64).abs());
    let col_def = (0..n).map(|k| (lambda_jk.col_sum(k) - mp.cols()[k] as f64).abs());
    let residual = row_def.chain(col_def).fold(0.0, f64::max);
    let gauge_defect = (n as f64 * it.a.iter().sum::<f64>() - m as f64 * it.b.iter().sum::<f64>()).abs()
        / (m as f64 * n as f64);
    Ok(SaddleSolution {
        m,
        n,
        lambda,
        r,
        a: it.a,
        b: it.b,
        q,
        rr,
        lambda_jk,
        big_a_jk,
        alpha_jk,
        beta_jk,
        gamma_jk,
        a_const,
        a3_const,
        a4_const,
        iterations: it.iterations,
        residual,
        gauge_defect,
        last_change: it.last_change,
        damped,
        newton,
    })
}

/// Closed-form third iterate `(a^(3), b^(3))` of the map, without remainder.
pub fn third_iterate_approx(stats: &MarginStats, mp: &MarginPair) -> Result<(Vec<f64>, Vec<f64>)> {
    stats.require_nondegenerate()?;
    let (m, n) = (stats.m as f64, stats.n as f64);
    let l = stats.lambda_f64();
    let (big_r, big_c) = (stats.r_f64(), stats.c_f64());
    let (sbar, tbar) = (stats.sbar_f64(), stats.tbar_f64());
    let skew = 1.0 - 2.0 * l;
    let d2 = l * l * (1.0 - l);
    let d3 = l.powi(3) * (1.0 - l).powi(2);
    let shared = skew * big_r * big_c / (2.0 * d3 * m.powi(3) * n.powi(3));
    let a3 = mp
        .rows()
        .iter()
        .map(|&s| {
            let x = s as f64 - sbar;
            x / (l * n) + x * big_c / (d2 * m * m * n * n) + skew * x * x * big_c / (d3 * m * m * n.powi(3))
                - shared
        })
        .collect();
    let b3 = mp
        .cols()
        .iter()
        .map(|&t| {
            let y = t as f64 - tbar;
            y / (l * m) + y * big_r / (d2 * m * m * n * n) + skew * y * y * big_r / (d3 * m.powi(3) * n * n)
                - shared
        })
        .collect();
    Ok((a3, b3))
}

/// Closed-form approximation of `Z_jk` at the saddle, without remainder.
pub fn third_iterate_z(stats: &MarginStats, mp: &MarginPair) -> Result<Grid> {
    stats.require_nondegenerate()?;
    let (m, n) = (stats.m as f64, stats.n as f64);
    let l = stats.lambda_f64();
    let (big_r, big_c) = (stats.r_f64(), stats.c_f64());
    let (sbar, tbar) = (stats.sbar_f64(), stats.tbar_f64());
    let skew = 1.0 - 2.0 * l;
    let d2 = l * l * (1.0 - l);
    let d3 = l.powi(3) * (1.0 - l).powi(2);
    Ok(Grid::from_fn(stats.m, stats.n, |j, k| {
        let x = mp.rows()[j] as f64 - sbar;
        let y = mp.cols()[k] as f64 - tbar;
        skew * x * y / (d2 * m * n) - x * y * y / (d2 * m * m * n) - x * x * y / (d2 * m * n * n)
            - skew * x * x * y * y / (d3 * m * m * n * n)
            + skew * x * y * big_r / (d3 * m * m * n.powi(3))
            + skew * x * y * big_c / (d3 * m.powi(3) * n * n)
    }))
}

/// Leading expansions of `λ_jk(1-λ_jk)`, `λ_jk(1-λ_jk)(1-2λ_jk)` and
/// `λ_jk(1-λ_jk)(1-6λ_jk+6λ_jk^2)` in the margin deviations.
#[derive(Debug, Clone)]
pub struct MomentExpansions {
    pub variance: Grid,
    pub skewness: Grid,
    pub kurtosis: Grid,
}

pub fn moment_expansions(stats: &MarginStats, mp: &MarginPair) -> Result<MomentExpansions> {
    stats.require_nondegenerate()?;
    let (m, n) = (stats.m as f64, stats.n as f64);
    let l = stats.lambda_f64();
    let (sbar, tbar) = (stats.sbar_f64(), stats.tbar_f64());
    let v = l * (1.0 - l);
    let skew = 1.0 - 2.0 * l;
    let quart = 1.0 - 6.0 * l + 6.0 * l * l;
    let dev = |j: usize, k: usize| (mp.rows()[j] as f64 - sbar, mp.cols()[k] as f64 - tbar);
    let variance = Grid::from_fn(stats.m, stats.n, |j, k| {
        let (x, y) = dev(j, k);
        v + skew * x / n + skew * y / m - x * x / (n * n) - y * y / (m * m) + quart * x * y / (v * m * n)
    });
    let skewness = Grid::from_fn(stats.m, stats.n, |j, k| {
        let (x, y) = dev(j, k);
        v * skew + quart * x / n + quart * y / m
    });
    let kurtosis = Grid::from_fn(stats.m, stats.n, |_, _| v * quart);
    Ok(MomentExpansions { variance, skewness, kurtosis })
}

/// `log P(s, t)` by both routes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrefactorForms {
    /// `-(m+n) log 2π - Σ [λ_jk log λ_jk + (1-λ_jk) log(1-λ_jk)]`.
    pub entropy: f64,
    /// `-(m+n) log 2π + Σ log(1+q_j r_k) - Σ s_j log q_j - Σ t_k log r_k`.
    pub product: f64,
}

/// The product form of `log P` for arbitrary radii.
pub fn log_prefactor_product(q: &[f64], rr: &[f64], mp: &MarginPair) -> f64 {
    let dims = (mp.m() + mp.n()) as f64;
    let mut acc = -dims * (2.0 * PI).ln();
    for &qj in q {
        for &rk in rr {
            acc += (qj * rk).ln_1p();
        }
    }
    acc -= mp.rows().iter().zip(q).map(|(&s, qj)| s as f64 * qj.ln()).sum::<f64>();
    acc -= mp.cols().iter().zip(rr).map(|(&t, rk)| t as f64 * rk.ln()).sum::<f64>();
    acc
}

pub fn log_prefactor_forms(sol: &SaddleSolution, mp: &MarginPair) -> PrefactorForms {
    let dims = (mp.m() + mp.n()) as f64;
    let ent: f64 = sol.lambda_jk.data.iter().map(|&l| l * l.ln() + (1.0 - l) * (-l).ln_1p()).sum();
    PrefactorForms { entropy: -dims * (2.0 * PI).ln() - ent, product: log_prefactor_product(&sol.q, &sol.rr, mp) }
}

/// `log P(s, t)`, checked against the product identity to `1e-8` relative.
pub fn log_prefactor(sol: &SaddleSolution, mp: &MarginPair) -> Result<f64> {
    let forms = log_prefactor_forms(sol, mp);
    let scale = forms.entropy.abs().max(forms.product.abs()).max(1.0);
    if (forms.entropy - forms.product).abs() > IDENTITY_TOL * scale {
        return Err(Error::IdentityViolation { entropy: forms.entropy, product: forms.product });
    }
    Ok(forms.entropy)
}

/// Leading-order approximation of `log P(s, t)` in terms of binomials.
pub fn log_prefactor_approx(stats: &MarginStats, mp: &MarginPair) -> Result<f64> {
    stats.require_nondegenerate()?;
    let (m, n) = (stats.m as f64, stats.n as f64);
    let a = stats.a_f64();
    let (big_r, big_c) = (stats.r_f64(), stats.c_f64());
    let mn = stats.m as u64 * stats.n as u64;
    let ones = mp.total();
    let head = 0.5 * (m + n - 1.0) * a.ln() + 0.5 * (n - 1.0) * m.ln() + 0.5 * (m - 1.0) * n.ln()
        - 2f64.ln()
        - 0.5 * (m + n + 1.0) * PI.ln();
    let binoms = -ln_binomial(mn, ones)
        + mp.rows().iter().map(|&s| ln_binomial(stats.n as u64, s as u64)).sum::<f64>()
        + mp.cols().iter().map(|&t| ln_binomial(stats.m as u64, t as u64)).sum::<f64>();
    let correction = (1.0 - 2.0 * a) / (24.0 * a) * (m / n + n / m)
        - big_r * big_c / (8.0 * a * a * m * m * n * n)
        - (1.0 - 4.0 * a) / (16.0 * a * a) * (big_r / (n * n) + big_c / (m * m));
    Ok(head + binoms + correction)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mp(s: &[u32], t: &[u32]) -> MarginPair {
        MarginPair::new(s.to_vec(), t.to_vec()).unwrap()
    }

    fn six() -> MarginPair {
        mp(&[4, 4, 3, 3, 2, 2], &[4, 4, 3, 3, 2, 2])
    }

    #[test]
    fn semiregular_is_a_fixed_point() {
        let sol = solve_saddle(&MarginPair::semiregular(4, 3, 6, 2).unwrap(), 1e-13, 200).unwrap();
        assert_eq!(sol.iterations, 1);
        assert!(sol.a.iter().chain(&sol.b).all(|&x| x == 0.0));
        assert!(sol.q.iter().chain(&sol.rr).all(|&x| (x - sol.r).abs() < 1e-15));
        assert!(sol.lambda_jk.data.iter().all(|&l| (l - 0.5).abs() < 1e-15));
        assert!(sol.residual < 1e-14);
    }

    #[test]
    fn six_by_six_converges() {
        let inst = six();
        let sol = solve_saddle(&inst, 1e-13, 200).unwrap();
        assert!(sol.residual < 1e-12, "{}", sol.residual);
        assert!(sol.iterations <= 60, "{}", sol.iterations);
        for j in 0..6 {
            assert!((sol.lambda_jk.row_sum(j) - inst.rows()[j] as f64).abs() < 1e-12);
            assert!((sol.lambda_jk.col_sum(j) - inst.cols()[j] as f64).abs() < 1e-12);
        }
        assert!(sol.gauge_defect < 1e-12);
    }

    #[test]
    fn full_rows_are_rejected() {
        assert!(matches!(solve_saddle(&mp(&[2, 2], &[2, 2]), 1e-13, 200), Err(Error::OutOfRange(_))));
        assert!(matches!(solve_saddle(&mp(&[0, 2], &[1, 1]), 1e-13, 200), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn nonconvergence_is_reported() {
        let cfg = SaddleConfig { tol: 1e-13, max_iter: 2, damped_fallback: true };
        assert!(matches!(solve_saddle_with(&six(), &cfg), Err(Error::NonConvergence { .. })));
    }

    #[test]
    fn solution_is_a_fixed_point_and_matches_margins() {
        let inst = six();
        let sol = solve_saddle(&inst, 1e-13, 200).unwrap();
        let (na, nb) = fixed_point_map(&inst, &sol.a, &sol.b).unwrap();
        assert!(max_change(&na, &sol.a) < 1e-12 && max_change(&nb, &sol.b) < 1e-12);
        let r2 = sol.r * sol.r;
        for j in 0..6 {
            for k in 0..6 {
                let lhs = sol.lambda_jk.at(j, k) / sol.lambda - 1.0 - sol.a[j] - sol.b[k];
                assert!((lhs - z_exact(sol.a[j], sol.b[k], r2)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn prefactor_half_density() {
        let inst = mp(&[1, 1], &[1, 1]);
        let sol = solve_saddle(&inst, 1e-13, 200).unwrap();
        let want = -4.0 * (2.0 * PI).ln() + 4.0 * 2f64.ln();
        assert!((log_prefactor(&sol, &inst).unwrap() - want).abs() < 1e-13);
    }

    #[test]
    fn prefactor_forms_agree_and_gauge_invariant() {
        let inst = six();
        let sol = solve_saddle(&inst, 1e-13, 200).unwrap();
        let f = log_prefactor_forms(&sol, &inst);
        assert!((f.entropy - f.product).abs() <= 1e-10 * f.entropy.abs());
        let q2: Vec<f64> = sol.q.iter().map(|x| 2.0 * x).collect();
        let r2: Vec<f64> = sol.rr.iter().map(|x| x / 2.0).collect();
        assert!((log_prefactor_product(&q2, &r2, &inst) - f.product).abs() < 1e-10);
    }

    #[test]
    fn identity_violation_detected() {
        let inst = six();
        let mut sol = solve_saddle(&inst, 1e-13, 200).unwrap();
        sol.q[0] *= 1.1;
        assert!(matches!(log_prefactor(&sol, &inst), Err(Error::IdentityViolation { .. })));
    }

    #[test]
    fn third_iterate_semiregular_is_zero() {
        let inst = MarginPair::semiregular(4, 2, 8, 1).unwrap();
        let (a3, b3) = third_iterate_approx(&compute_stats(&inst), &inst).unwrap();
        assert!(a3.iter().chain(&b3).all(|&x| x == 0.0));
    }

    #[test]
    fn third_iterate_half_density_reduces() {
        let inst = mp(&[3, 2, 1, 2], &[3, 1, 2, 2]);
        let st = compute_stats(&inst);
        assert_eq!(st.lambda_f64(), 0.5);
        let (a3, _) = third_iterate_approx(&st, &inst).unwrap();
        let (m, n, c) = (4.0, 4.0, st.c_f64());
        for (j, &s) in inst.rows().iter().enumerate() {
            let x = s as f64 - 2.0;
            let want = x / (0.5 * n) + x * c / (0.25 * 0.5 * m * m * n * n);
            assert!((a3[j] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn uneven_margins_use_newton() {
        let inst = mp(&[3, 3, 6, 6, 4, 6, 5, 3, 3, 6], &[8, 8, 1, 8, 7, 4, 9]);
        let plain = SaddleConfig { damped_fallback: false, ..SaddleConfig::default() };
        assert!(solve_saddle_with(&inst, &plain).is_err());
        let sol = solve_saddle(&inst, 1e-13, 200).unwrap();
        assert!(sol.newton && sol.residual < 1e-12, "{}", sol.residual);
        assert!(sol.gauge_defect < 1e-12);
        let f = log_prefactor_forms(&sol, &inst);
        assert!((f.entropy - f.product).abs() < 1e-10 * f.entropy.abs());
    }

    #[test]
    fn third_iterate_tracks_solver() {
        let inst = six();
        let sol = solve_saddle(&inst, 1e-13, 200).unwrap();
        let (a3, b3) = third_iterate_approx(&compute_stats(&inst), &inst).unwrap();
        assert!(max_change(&a3, &sol.a) < 5e-3);
        assert!(max_change(&b3, &sol.b) < 5e-3);
    }

    #[test]
    fn prefactor_approx_semiregular_closed_form() {
        let inst = MarginPair::semiregular(4, 2, 4, 2).unwrap();
        let st = compute_stats(&inst);
        let a: f64 = 0.125;
        let want = 3.5 * a.ln() + 1.5 * 4f64.ln() + 1.5 * 4f64.ln() - 2f64.ln() - 4.5 * PI.ln()
            - ln_binomial(16, 8)
            + 8.0 * 6f64.ln()
            + (1.0 - 2.0 * a) / (24.0 * a) * 2.0;
        assert!((log_prefactor_approx(&st, &inst).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn degenerate_density_rejected() {
        let inst = MarginPair::semiregular(2, 2, 2, 2).unwrap();
        let st = compute_stats(&inst);
        assert_eq!(third_iterate_approx(&st, &inst).unwrap_err(), Error::DegenerateDensity);
        assert_eq!(log_prefactor_approx(&st, &inst).unwrap_err(), Error::DegenerateDensity);
    }
}
