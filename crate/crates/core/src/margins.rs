//! Problem instances and their derived statistics.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row sums `s` (length `m`) and column sums `t` (length `n`).
///
/// Construction validates that both vectors are non-empty, that the totals
/// agree and that every row sum fits in `n` columns (every column sum in `m`
/// rows). Zero entries are allowed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawInstance", into = "RawInstance")]
pub struct MarginPair {
    s: Vec<u32>,
    t: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInstance {
    s: Vec<u32>,
    t: Vec<u32>,
}

impl TryFrom<RawInstance> for MarginPair {
    type Error = Error;

    fn try_from(raw: RawInstance) -> Result<Self> {
        MarginPair::new(raw.s, raw.t)
    }
}

impl From<MarginPair> for RawInstance {
    fn from(mp: MarginPair) -> Self {
        RawInstance { s: mp.s, t: mp.t }
    }
}

impl MarginPair {
    pub fn new(s: Vec<u32>, t: Vec<u32>) -> Result<Self> {
        if s.is_empty() || t.is_empty() {
            return Err(Error::InvalidInstance("need at least one row and one column".into()));
        }
        let (m, n) = (s.len(), t.len());
        if let Some((j, &v)) = s.iter().enumerate().find(|&(_, &v)| v as usize > n) {
            return Err(Error::OutOfRange(format!("s[{j}] = {v} exceeds n = {n}")));
        }
        if let Some((k, &v)) = t.iter().enumerate().find(|&(_, &v)| v as usize > m) {
            return Err(Error::OutOfRange(format!("t[{k}] = {v} exceeds m = {m}")));
        }
        let rows: u64 = s.iter().map(|&v| v as u64).sum();
        let cols: u64 = t.iter().map(|&v| v as u64).sum();
        if rows != cols {
            return Err(Error::MarginMismatch { rows, cols });
        }
        Ok(MarginPair { s, t })
    }

    /// Semiregular instance: `m` rows of sum `row`, `n` columns of sum `col`.
    pub fn semiregular(m: usize, row: u32, n: usize, col: u32) -> Result<Self> {
        MarginPair::new(vec![row; m], vec![col; n])
    }

    /// Parse the JSON instance document `{"s": [...], "t": [...]}`.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidInstance(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("instance serializes")
    }

    pub fn rows(&self) -> &[u32] {
        &self.s
    }

    pub fn cols(&self) -> &[u32] {
        &self.t
    }

    pub fn m(&self) -> usize {
        self.s.len()
    }

    pub fn n(&self) -> usize {
        self.t.len()
    }

    /// Number of ones in any matrix with these margins.
    pub fn total(&self) -> u64 {
        self.s.iter().map(|&v| v as u64).sum()
    }

    pub fn transpose(&self) -> MarginPair {
        MarginPair { s: self.t.clone(), t: self.s.clone() }
    }

    pub fn is_semiregular(&self) -> bool {
        self.s.windows(2).all(|w| w[0] == w[1]) && self.t.windows(2).all(|w| w[0] == w[1])
    }

    /// Every margin strictly inside `(0, n)` resp. `(0, m)`.
    pub fn is_strict(&self) -> bool {
        let (m, n) = (self.m() as u32, self.n() as u32);
        self.s.iter().all(|&v| v > 0 && v < n) && self.t.iter().all(|&v| v > 0 && v < m)
    }

    /// Some fractional matrix with these margins has every entry in `(0, 1)`,
    /// i.e. no cell is forced. With strict margins this is the Gale–Ryser
    /// inequality holding strictly for every `k < n`.
    pub fn has_interior(&self) -> bool {
        if !self.is_strict() {
            return false;
        }
        let mut t = self.t.clone();
        t.sort_unstable_by(|a, b| b.cmp(a));
        let mut top = 0u64;
        for (k, &tk) in t.iter().enumerate().take(t.len() - 1) {
            top += tk as u64;
            let cap: u64 = self.s.iter().map(|&v| v.min(k as u32 + 1) as u64).sum();
            if top >= cap {
                return false;
            }
        }
        true
    }

    pub(crate) fn require_strict(&self) -> Result<()> {
        if !self.is_strict() {
            Err(Error::OutOfRange(
                "every margin must satisfy 0 < s_j < n and 0 < t_k < m".into(),
            ))
        } else if !self.has_interior() {
            Err(Error::OutOfRange("margins force some cells to 0 or 1; the saddle point is at infinity".into()))
        } else {
            Ok(())
        }
    }
}

/// Exact derived scalars of an instance.
///
/// `c_ell` follows the convention `C_l = sum_k (tbar - t_k)^l`, which differs
/// in sign from `R_l` for odd `l`; [`MarginStats::c_centered`] gives the
/// `sum_k (t_k - tbar)^l` form.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginStats {
    pub m: usize,
    pub n: usize,
    pub sbar: BigRational,
    pub tbar: BigRational,
    pub lambda: BigRational,
    pub a: BigRational,
    pub a3: BigRational,
    pub a4: BigRational,
    /// `R_2, R_3, R_4`.
    pub r_ell: [BigRational; 3],
    /// `C_2, C_3, C_4` with the `(tbar - t_k)` sign convention.
    pub c_ell: [BigRational; 3],
    pub max_row_dev: BigRational,
    pub max_col_dev: BigRational,
}

fn rat(v: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

pub(crate) fn to_f64(x: &BigRational) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

fn power_sums(values: impl Iterator<Item = BigRational>) -> [BigRational; 3] {
    let mut out = [BigRational::zero(), BigRational::zero(), BigRational::zero()];
    for d in values {
        let d2 = &d * &d;
        let d3 = &d2 * &d;
        let d4 = &d2 * &d2;
        out[0] += d2;
        out[1] += d3;
        out[2] += d4;
    }
    out
}

impl MarginStats {
    /// `R_l` for `l` in `2..=4`.
    pub fn r(&self, ell: usize) -> &BigRational {
        &self.r_ell[ell - 2]
    }

    /// `C_l = sum_k (tbar - t_k)^l` for `l` in `2..=4`.
    pub fn c(&self, ell: usize) -> &BigRational {
        &self.c_ell[ell - 2]
    }

    /// `sum_k (t_k - tbar)^l`, the same orientation as `R_l`.
    pub fn c_centered(&self, ell: usize) -> BigRational {
        if ell.is_multiple_of(2) {
            self.c(ell).clone()
        } else {
            -self.c(ell).clone()
        }
    }

    pub fn big_r(&self) -> &BigRational {
        self.r(2)
    }

    pub fn big_c(&self) -> &BigRational {
        self.c(2)
    }

    pub fn lambda_f64(&self) -> f64 {
        to_f64(&self.lambda)
    }

    pub fn a_f64(&self) -> f64 {
        to_f64(&self.a)
    }

    pub fn a3_f64(&self) -> f64 {
        to_f64(&self.a3)
    }

    pub fn a4_f64(&self) -> f64 {
        to_f64(&self.a4)
    }

    pub fn r_f64(&self) -> f64 {
        to_f64(self.r(2))
    }

    pub fn c_f64(&self) -> f64 {
        to_f64(self.c(2))
    }

    pub fn sbar_f64(&self) -> f64 {
        to_f64(&self.sbar)
    }

    pub fn tbar_f64(&self) -> f64 {
        to_f64(&self.tbar)
    }

    /// `0 < lambda < 1`.
    pub fn is_nondegenerate(&self) -> bool {
        self.lambda.is_positive() && self.lambda < BigRational::one()
    }

    pub(crate) fn require_nondegenerate(&self) -> Result<()> {
        if self.is_nondegenerate() {
            Ok(())
        } else {
            Err(Error::DegenerateDensity)
        }
    }
}

pub fn compute_stats(mp: &MarginPair) -> MarginStats {
    let (m, n) = (mp.m(), mp.n());
    let total = mp.total() as i64;
    let sbar = BigRational::new(BigInt::from(total), BigInt::from(m));
    let tbar = BigRational::new(BigInt::from(total), BigInt::from(n));
    let lambda = BigRational::new(BigInt::from(total), BigInt::from(m as u64 * n as u64));
    let one = BigRational::one();
    let q = &lambda * (&one - &lambda);
    let a = &q / rat(2);
    let a3 = &q * (&one - &lambda * rat(2)) / rat(6);
    let a4 = &q * (&one - &lambda * rat(6) + &lambda * &lambda * rat(6)) / rat(24);

    let row_dev = |v: &u32| rat(*v as i64) - &sbar;
    let col_dev = |v: &u32| &tbar - rat(*v as i64);
    let r_ell = power_sums(mp.rows().iter().map(row_dev));
    let c_ell = power_sums(mp.cols().iter().map(col_dev));
    let max_row_dev = mp.rows().iter().map(|v| row_dev(v).abs()).max().unwrap_or_default();
    let max_col_dev = mp.cols().iter().map(|v| col_dev(v).abs()).max().unwrap_or_default();

    MarginStats { m, n, sbar, tbar, lambda, a, a3, a4, r_ell, c_ell, max_row_dev, max_col_dev }
}

/// Diagnostics for the hypotheses of the dense-case formula on one instance.
///
/// The deviation ratios are dimensionless magnitudes only: growth-rate
/// hypotheses cannot be decided on a single instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplicabilityReport {
    /// `(1-2λ)^2 / (8A) · (1 + 5m/6n + 5n/6m)`.
    pub density_lhs: f64,
    /// `a · log n`.
    pub density_rhs: f64,
    pub density_ok: bool,
    /// `max_j |s_j - s| / n^(1/2 + eps)`.
    pub row_deviation_ratio: f64,
    /// `max_k |t_k - t| / m^(1/2 + eps)`.
    pub col_deviation_ratio: f64,
    pub m_over_n: f64,
    pub n_over_m: f64,
}

pub fn check_applicability(stats: &MarginStats, a: f64, eps: f64) -> Result<ApplicabilityReport> {
    stats.require_nondegenerate()?;
    if a.is_nan() || a <= 0.0 || eps.is_nan() || eps <= 0.0 {
        return Err(Error::DomainError("a and eps must be positive".into()));
    }
    let (m, n) = (stats.m as i64, stats.n as i64);
    let one = BigRational::one();
    let skew = &one - &stats.lambda * rat(2);
    let aspect = &one
        + BigRational::new(BigInt::from(5 * m), BigInt::from(6 * n))
        + BigRational::new(BigInt::from(5 * n), BigInt::from(6 * m));
    let lhs = &skew * &skew / (&stats.a * rat(8)) * aspect;
    let density_lhs = to_f64(&lhs);
    let density_rhs = a * (n as f64).ln();
    let (mf, nf) = (m as f64, n as f64);
    Ok(ApplicabilityReport {
        density_lhs,
        density_rhs,
        density_ok: density_lhs <= density_rhs,
        row_deviation_ratio: to_f64(&stats.max_row_dev) / nf.powf(0.5 + eps),
        col_deviation_ratio: to_f64(&stats.max_col_dev) / mf.powf(0.5 + eps),
        m_over_n: mf / nf,
        n_over_m: nf / mf,
    })
}
