//! Closed-form estimate for box integrals of perturbed Gaussians.
//!
//! For
//!
//! ```text
//! f(z) = exp(-ÂN Σ z_j^2 + Σ a_j z_j^2 + N Σ B_j z_j^3 + Σ C_jk z_j z_k^2
//!            + N Σ E_j z_j^4 + Σ F_jk z_j^2 z_k^2 + Σ J_j z_j)
//! ```
//!
//! on the box `|z_j| <= N^(-1/2 + ε̂)`, the integral is approximated by
//! `(π/(ÂN))^(N/2) exp(Θ1 + Θ2)`. All index sums run over every index tuple,
//! coincident indices included.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::quadrature::{blocked_sum, simpson_rule};
use crate::saddle::SaddleSolution;

pub const MAX_DIRECT_DIM: usize = 4;
pub const MAX_DIRECT_NODES: u64 = 1_000_000_000;

type C = Complex64;

/// Coefficients of `f`. Complex numbers travel as `[re, im]` pairs in JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentCoefficients {
    #[serde(rename = "N")]
    pub dim: usize,
    #[serde(rename = "Ahat")]
    pub ahat: f64,
    pub a: Vec<C>,
    #[serde(rename = "B")]
    pub b: Vec<C>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<C>>,
    #[serde(rename = "E")]
    pub e: Vec<C>,
    #[serde(rename = "F")]
    pub f: Vec<Vec<C>>,
    #[serde(rename = "J")]
    pub j: Vec<C>,
    pub eps_hat: f64,
}

fn zero() -> C {
    C::new(0.0, 0.0)
}

impl MomentCoefficients {
    /// All perturbation coefficients zero.
    pub fn gaussian(dim: usize, ahat: f64, eps_hat: f64) -> Self {
        MomentCoefficients {
            dim,
            ahat,
            a: vec![zero(); dim],
            b: vec![zero(); dim],
            c: vec![vec![zero(); dim]; dim],
            e: vec![zero(); dim],
            f: vec![vec![zero(); dim]; dim],
            j: vec![zero(); dim],
            eps_hat,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mc: MomentCoefficients =
            serde_json::from_str(text).map_err(|e| Error::InvalidInstance(e.to_string()))?;
        mc.validate()?;
        Ok(mc)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim;
        if n == 0 {
            return Err(Error::InvalidInstance("N must be positive".into()));
        }
        if self.ahat.is_nan() || self.ahat <= 0.0 {
            return Err(Error::InvalidInstance(format!("Ahat must be positive, got {}", self.ahat)));
        }
        if !(self.eps_hat > 0.0 && self.eps_hat < 0.5) {
            return Err(Error::InvalidInstance(format!("eps_hat must lie in (0, 1/2), got {}", self.eps_hat)));
        }
        let vec_ok = [&self.a, &self.b, &self.e, &self.j].iter().all(|v| v.len() == n);
        let mat_ok = [&self.c, &self.f].iter().all(|mat| mat.len() == n && mat.iter().all(|row| row.len() == n));
        if !vec_ok || !mat_ok {
            return Err(Error::InvalidInstance(format!("coefficient arrays must have dimension N = {n}")));
        }
        Ok(())
    }

    /// Multiply every perturbation coefficient by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let v = |x: &Vec<C>| x.iter().map(|z| z * factor).collect();
        let mat = |x: &Vec<Vec<C>>| x.iter().map(|r| r.iter().map(|z| z * factor).collect()).collect();
        MomentCoefficients {
            dim: self.dim,
            ahat: self.ahat,
            a: v(&self.a),
            b: v(&self.b),
            c: mat(&self.c),
            e: v(&self.e),
            f: mat(&self.f),
            j: v(&self.j),
            eps_hat: self.eps_hat,
        }
    }

    /// Half-width `N^(-1/2 + ε̂)` of the integration box.
    pub fn half_width(&self) -> f64 {
        (self.dim as f64).powf(-0.5 + self.eps_hat)
    }

    fn c_row_sums(&self) -> Vec<C> {
        self.c.iter().map(|row| row.iter().sum()).collect()
    }
}

pub fn theta1(mc: &MomentCoefficients) -> C {
    let n = mc.dim as f64;
    let ah = mc.ahat;
    let sum_a: C = mc.a.iter().sum();
    let sum_a2: C = mc.a.iter().map(|x| x * x).sum();
    let sum_b2: C = mc.b.iter().map(|x| x * x).sum();
    let c_rows = mc.c_row_sums();
    let sum_bc: C = mc.b.iter().zip(&c_rows).map(|(b, cr)| b * cr).sum();
    let sum_cc: C = c_rows.iter().map(|cr| cr * cr).sum();
    let sum_e: C = mc.e.iter().sum();
    let sum_f: C = mc.f.iter().flatten().sum();
    sum_a / (2.0 * ah * n)
        + sum_a2 / (4.0 * ah * ah * n * n)
        + sum_b2 * (15.0 / (16.0 * ah.powi(3) * n))
        + sum_bc * (3.0 / (8.0 * ah.powi(3) * n * n))
        + sum_cc / (16.0 * ah.powi(3) * n.powi(3))
        + sum_e * (3.0 / (4.0 * ah * ah * n))
        + sum_f / (4.0 * ah * ah * n * n)
}

pub fn theta2(mc: &MomentCoefficients) -> C {
    let n = mc.dim as f64;
    let ah = mc.ahat;
    let a = &mc.a;
    let c_rows = mc.c_row_sums();
    // Σ_k a_k C_jk for each j
    let ac_rows: Vec<C> = mc.c.iter().map(|row| row.iter().zip(a).map(|(c, ak)| c * ak).sum()).collect();

    let sum_a3: C = a.iter().map(|x| x * x * x).sum();
    let sum_ae: C = a.iter().zip(&mc.e).map(|(x, e)| x * e).sum();
    let sum_ab2: C = a.iter().zip(&mc.b).map(|(x, b)| x * b * b).sum();
    let sum_af: C = (0..mc.dim)
        .flat_map(|j| (0..mc.dim).map(move |k| (j, k)))
        .map(|(j, k)| (a[j] + a[k]) * mc.f[j][k])
        .sum();
    let sum_bj: C = mc.b.iter().zip(&mc.j).map(|(b, jj)| b * jj).sum();
    let sum_cj: C = c_rows.iter().zip(&mc.j).map(|(cr, jj)| cr * jj).sum();
    // Σ_jkl (a_j + 2a_k) C_jk C_jl = Σ_j (a_j c_j + 2 (aC)_j) c_j
    let sum_acc: C = (0..mc.dim).map(|j| (a[j] * c_rows[j] + ac_rows[j] * 2.0) * c_rows[j]).sum();
    // Σ_jk (2a_j + a_k) B_j C_jk = Σ_j B_j (2 a_j c_j + (aC)_j)
    let sum_abc: C = (0..mc.dim).map(|j| mc.b[j] * (a[j] * c_rows[j] * 2.0 + ac_rows[j])).sum();

    sum_a3 / (6.0 * ah.powi(3) * n.powi(3))
        + sum_ae * (3.0 / (2.0 * ah.powi(3) * n * n))
        + sum_ab2 * (45.0 / (16.0 * ah.powi(4) * n * n))
        + sum_af / (4.0 * ah.powi(3) * n.powi(3))
        + sum_bj * (3.0 / (4.0 * ah * ah * n))
        + sum_cj / (4.0 * ah * ah * n * n)
        + sum_acc / (16.0 * ah.powi(4) * n.powi(4))
        + sum_abc * (3.0 / (8.0 * ah.powi(4) * n.powi(3)))
}

/// The error-scale factor `Ẑ`; always at least 1.
pub fn big_z(mc: &MomentCoefficients) -> f64 {
    let n = mc.dim as f64;
    let ah = mc.ahat;
    let sum_a2: f64 = mc.a.iter().map(|x| x.im * x.im).sum();
    let sum_b2: f64 = mc.b.iter().map(|x| x.im * x.im).sum();
    let c_rows: Vec<f64> = mc.c.iter().map(|row| row.iter().map(|x| x.im).sum()).collect();
    let sum_bc: f64 = mc.b.iter().zip(&c_rows).map(|(b, cr)| b.im * cr).sum();
    let sum_cc: f64 = c_rows.iter().map(|cr| cr * cr).sum();
    let exponent = sum_a2 / (4.0 * ah * ah * n * n)
        + 15.0 * sum_b2 / (16.0 * ah.powi(3) * n)
        + 3.0 * sum_bc / (8.0 * ah.powi(3) * n * n)
        + sum_cc / (16.0 * ah.powi(3) * n.powi(3));
    let z = exponent.exp();
    debug_assert!(z >= 1.0 - 1e-12, "Ẑ = {z} below 1");
    z
}

/// `log` of the estimate: `(N/2) log(π/(ÂN)) + Θ1 + Θ2`.
pub fn mw3_estimate(mc: &MomentCoefficients) -> C {
    let n = mc.dim as f64;
    C::new(0.5 * n * (PI / (mc.ahat * n)).ln(), 0.0) + theta1(mc) + theta2(mc)
}

/// `log ∫_box exp(-ÂN Σ z_j^2) dz`, the zero-coefficient integral in closed form.
pub fn gaussian_box_log(mc: &MomentCoefficients) -> f64 {
    let n = mc.dim as f64;
    let scale = mc.ahat * n;
    n * ((PI / scale).sqrt() * erf(scale.sqrt() * mc.half_width())).ln()
}

/// `log` of the fraction of the full Gaussian mass of `exp(-ÂN Σ z_j^2)` that
/// lies inside the box.
pub fn gaussian_box_fraction_log(mc: &MomentCoefficients) -> f64 {
    let n = mc.dim as f64;
    n * erf((mc.ahat * n).sqrt() * mc.half_width()).ln()
}

/// Exponent of `f` at `z`.
pub fn log_f(mc: &MomentCoefficients, z: &[f64]) -> C {
    let n = mc.dim as f64;
    let mut acc = C::new(0.0, 0.0);
    for (j, &zj) in z.iter().enumerate() {
        let z2 = zj * zj;
        acc += -mc.ahat * n * z2 + mc.a[j] * z2 + mc.b[j] * (n * z2 * zj) + mc.e[j] * (n * z2 * z2) + mc.j[j] * zj;
        for (k, &zk) in z.iter().enumerate() {
            acc += mc.c[j][k] * (zj * zk * zk) + mc.f[j][k] * (z2 * zk * zk);
        }
    }
    acc
}

/// Tensor-product composite Simpson quadrature of `f` over the box.
///
/// `nodes_per_dim` is rounded up to the next odd number.
pub fn integrate_f_direct(mc: &MomentCoefficients, nodes_per_dim: usize) -> Result<C> {
    mc.validate()?;
    if mc.dim > MAX_DIRECT_DIM {
        return Err(Error::DomainError(format!("direct quadrature supports N <= 4, got {}", mc.dim)));
    }
    let nodes = (nodes_per_dim.max(3)) | 1;
    let total = (nodes as u64)
        .checked_pow(mc.dim as u32)
        .filter(|&t| t <= MAX_DIRECT_NODES)
        .ok_or(Error::ResourceLimit { what: "quadrature nodes", used: u64::MAX, limit: MAX_DIRECT_NODES })?;
    let (xs, ws) = simpson_rule(mc.half_width(), nodes);
    let dim = mc.dim;
    let inner = (nodes as u64).pow(dim as u32 - 1);
    let sum = blocked_sum(total, inner, |range| {
        let mut z = vec![0.0; dim];
        let mut acc = C::new(0.0, 0.0);
        for idx in range {
            let mut rest = idx;
            let mut w = 1.0;
            for zj in z.iter_mut() {
                let i = (rest % nodes as u64) as usize;
                rest /= nodes as u64;
                *zj = xs[i];
                w *= ws[i];
            }
            acc += log_f(mc, &z).exp() * w;
        }
        acc
    });
    Ok(sum)
}

/// Relative gap `|direct - exp(estimate)| / |exp(estimate)|` after correcting
/// the estimate for the Gaussian mass outside the box.
pub fn box_corrected_defect(mc: &MomentCoefficients, direct: C) -> f64 {
    let est = (mw3_estimate(mc) + gaussian_box_fraction_log(mc)).exp();
    (direct - est).norm() / est.norm()
}

fn eps_hat_for(big: usize, dim: usize, eps: f64) -> Result<f64> {
    if dim < 2 {
        return Err(Error::DomainError("the instantiation needs N >= 2".into()));
    }
    // 2 big^(-1/2 + eps) = N^(-1/2 + eps_hat)
    let lhs = 2f64.ln() + (-0.5 + eps) * (big as f64).ln();
    let eps_hat = 0.5 + lhs / (dim as f64).ln();
    if !(eps_hat > 0.0 && eps_hat < 0.5) {
        return Err(Error::DomainError(format!("box exponent {eps_hat} outside (0, 1/2)")));
    }
    Ok(eps_hat)
}

/// Coefficients for integrating out the row angles (`N = m - 1`), built from
/// a saddle solution with all column-angle dependence set to zero.
pub fn row_instantiation(sol: &SaddleSolution, eps: f64) -> Result<MomentCoefficients> {
    let (m, n) = (sol.m, sol.n);
    let dim = m.saturating_sub(1);
    let eps_hat = eps_hat_for(n, dim, eps)?;
    let (a, a3, a4) = (sol.a_const, sol.a3_const, sol.a4_const);
    let (mf, nf, df) = (m as f64, n as f64, dim as f64);
    let c_shift = -1.0 / (mf + mf.sqrt());
    let alpha_row = |j: usize| (0..n - 1).map(|k| sol.alpha_jk.at(j, k)).sum::<f64>();
    let beta_row = |j: usize| (0..n - 1).map(|k| sol.beta_jk.at(j, k)).sum::<f64>();
    Ok(MomentCoefficients {
        dim,
        ahat: a * nf / df,
        a: (0..dim).map(|j| C::new(-alpha_row(j), 0.0)).collect(),
        b: (0..dim).map(|j| C::new(0.0, -(a3 * nf + beta_row(j)) / df)).collect(),
        c: vec![vec![C::new(0.0, -3.0 * a3 * c_shift * nf); dim]; dim],
        e: vec![C::new(a4 * nf / df, 0.0); dim],
        f: vec![vec![C::new(-9.0 * a3 * a3 * nf / (4.0 * a * mf), 0.0); dim]; dim],
        j: vec![zero(); dim],
        eps_hat,
    })
}

/// Coefficients for integrating out the column angles (`N = n - 1`).
pub fn column_instantiation(sol: &SaddleSolution, eps: f64) -> Result<MomentCoefficients> {
    let (m, n) = (sol.m, sol.n);
    let dim = n.saturating_sub(1);
    let eps_hat = eps_hat_for(m, dim, eps)?;
    let (a, a3, a4) = (sol.a_const, sol.a3_const, sol.a4_const);
    let (mf, nf, df) = (m as f64, n as f64, dim as f64);
    let d_shift = -1.0 / (nf + nf.sqrt());
    let alpha_col = |k: usize| (0..m - 1).map(|j| sol.alpha_jk.at(j, k)).sum::<f64>();
    let beta_col = |k: usize| (0..m - 1).map(|j| sol.beta_jk.at(j, k)).sum::<f64>();
    let shift = 3.0 * a4 * mf / (a * nf) - 9.0 * a3 * a3 * mf / (4.0 * a * a * nf);
    Ok(MomentCoefficients {
        dim,
        ahat: a * mf / df,
        a: (0..dim).map(|k| C::new(shift - alpha_col(k), 0.0)).collect(),
        b: (0..dim).map(|k| C::new(0.0, -(a3 * mf + beta_col(k)) / df)).collect(),
        c: vec![vec![C::new(0.0, -3.0 * a3 * d_shift * mf); dim]; dim],
        e: vec![C::new(a4 * mf / df, 0.0); dim],
        f: vec![vec![C::new(-9.0 * a3 * a3 * mf / (4.0 * a * nf), 0.0); dim]; dim],
        j: vec![zero(); dim],
        eps_hat,
    })
}
