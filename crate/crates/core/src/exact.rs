//! Exact counting of 0-1 matrices with given line sums.
//!
//! The main counter processes columns one at a time. A state is the multiset
//! of residual row sums (rows still needing ones) together with the multiset of
//! columns still to place; the number of completions depends on nothing else,
//! so states are memoized on a canonical sorted key. Rows sharing a residual
//! value are interchangeable, so a transition picks how many rows `c_v` of each
//! residual class `v` receive a one in the current column and weights the
//! child by `prod_v binom(n_v, c_v)`.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use dashmap::DashMap;
use num_bigint::BigUint;
use num_traits::{One, Zero};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::margins::MarginPair;
use crate::quadrature::blocked_sum;

pub const DEFAULT_STATE_CAP: u64 = 100_000_000;
pub const BRUTE_FORCE_MAX_CELLS: usize = 25;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExactCount {
    pub value: BigUint,
    /// Distinct DP states expanded (matrices enumerated for brute force).
    pub states_visited: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ColumnOrder {
    Given,
    Ascending,
    #[default]
    Descending,
}

/// Memo table that can outlive one call and be shared between threads.
///
/// Entries are value-deterministic, so concurrent inserts of the same key are
/// harmless.
#[derive(Debug, Clone, Default)]
pub struct SharedMemo(Arc<DashMap<Box<[u16]>, BigUint>>);

impl SharedMemo {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct CounterConfig {
    pub state_cap: u64,
    pub column_order: ColumnOrder,
    /// Split the first column's branches across the rayon pool.
    pub parallel: bool,
    /// Use (and fill) this table instead of a per-call one.
    pub memo: Option<SharedMemo>,
}

impl Default for CounterConfig {
    fn default() -> Self {
        CounterConfig {
            state_cap: DEFAULT_STATE_CAP,
            column_order: ColumnOrder::Descending,
            parallel: false,
            memo: None,
        }
    }
}

/// Gale–Ryser test on raw sums: equal totals and, with columns sorted
/// descending, `sum_{k<=l} t_k <= sum_j min(s_j, l)` for every `l`.
fn gale_ryser(rows: &[u16], cols: &[u16]) -> bool {
    let total_r: u64 = rows.iter().map(|&v| v as u64).sum();
    let total_c: u64 = cols.iter().map(|&v| v as u64).sum();
    if total_r != total_c {
        return false;
    }
    let width = cols.len();
    // conj[l] = #{j : s_j >= l}, so sum_j min(s_j, l) = conj[1] + ... + conj[l]
    let mut conj = vec![0u64; width + 2];
    for &r in rows {
        let r = r as usize;
        if r > width {
            return false;
        }
        conj[r] += 1;
    }
    for l in (1..=width).rev() {
        conj[l] += conj[l + 1];
    }
    let mut sorted = cols.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    let (mut lhs, mut rhs) = (0u64, 0u64);
    for (l, &c) in sorted.iter().enumerate() {
        lhs += c as u64;
        rhs += conj[l + 1];
        if lhs > rhs {
            return false;
        }
    }
    true
}

fn as_u16(values: &[u32]) -> Vec<u16> {
    values.iter().map(|&v| v as u16).collect()
}

fn check_dims(mp: &MarginPair) -> Result<()> {
    if mp.m() >= u16::MAX as usize || mp.n() >= u16::MAX as usize {
        return Err(Error::ResourceLimit {
            what: "matrix dimension",
            used: mp.m().max(mp.n()) as u64,
            limit: u16::MAX as u64 - 1,
        });
    }
    Ok(())
}

/// True iff at least one matrix has these line sums.
pub fn gale_ryser_feasible(mp: &MarginPair) -> bool {
    gale_ryser(&as_u16(mp.rows()), &as_u16(mp.cols()))
}

enum Memo {
    Local(HashMap<Box<[u16]>, BigUint>),
    Shared(SharedMemo),
}

impl Memo {
    fn get(&self, key: &[u16]) -> Option<BigUint> {
        match self {
            Memo::Local(map) => map.get(key).cloned(),
            Memo::Shared(shared) => shared.0.get(key).map(|v| v.value().clone()),
        }
    }

    fn insert(&mut self, key: Box<[u16]>, value: BigUint) {
        match self {
            Memo::Local(map) => {
                map.insert(key, value);
            }
            Memo::Shared(shared) => {
                shared.0.insert(key, value);
            }
        }
    }
}

struct Counter<'a> {
    cols: &'a [u16],
    binom: &'a [Vec<BigUint>],
    memo: Memo,
    visited: &'a AtomicU64,
    cap: u64,
}

/// One admissible way to fill a column: the child residual and its weight.
struct Branch {
    residual: Vec<u16>,
    weight: BigUint,
}

/// Runs of equal values in a descending residual vector: `(value, start, len)`.
fn classes(residual: &[u16]) -> Vec<(u16, usize, usize)> {
    let mut out: Vec<(u16, usize, usize)> = Vec::new();
    for (i, &v) in residual.iter().enumerate() {
        match out.last_mut() {
            Some(last) if last.0 == v => last.2 += 1,
            _ => out.push((v, i, 1)),
        }
    }
    out
}

fn branches(residual: &[u16], need: usize, binom: &[Vec<BigUint>]) -> Vec<Branch> {
    let cls = classes(residual);
    let mut capacity_after = vec![0usize; cls.len() + 1];
    for i in (0..cls.len()).rev() {
        capacity_after[i] = capacity_after[i + 1] + cls[i].2;
    }
    let mut out = Vec::new();
    let mut picks = vec![0usize; cls.len()];
    #[allow(clippy::too_many_arguments)]
    fn walk(
        idx: usize,
        need: usize,
        cls: &[(u16, usize, usize)],
        capacity_after: &[usize],
        picks: &mut [usize],
        residual: &[u16],
        binom: &[Vec<BigUint>],
        out: &mut Vec<Branch>,
    ) {
        if idx == cls.len() {
            if need == 0 {
                let mut child = residual.to_vec();
                let mut weight = BigUint::one();
                for (&(_, start, len), &c) in cls.iter().zip(picks.iter()) {
                    for slot in &mut child[start + len - c..start + len] {
                        *slot -= 1;
                    }
                    weight *= &binom[len][c];
                }
                while child.last() == Some(&0) {
                    child.pop();
                }
                out.push(Branch { residual: child, weight });
            }
            return;
        }
        if capacity_after[idx] < need {
            return;
        }
        let len = cls[idx].2;
        for c in 0..=need.min(len) {
            picks[idx] = c;
            walk(idx + 1, need - c, cls, capacity_after, picks, residual, binom, out);
        }
        picks[idx] = 0;
    }
    walk(0, need, &cls, &capacity_after, &mut picks, residual, binom, &mut out);
    out
}

fn memo_key(residual: &[u16], remaining: &[u16]) -> Box<[u16]> {
    let mut rest = remaining.to_vec();
    rest.sort_unstable_by(|a, b| b.cmp(a));
    let mut key = Vec::with_capacity(residual.len() + rest.len() + 1);
    key.extend_from_slice(residual);
    key.push(u16::MAX);
    key.extend_from_slice(&rest);
    key.into_boxed_slice()
}

impl Counter<'_> {
    fn count(&mut self, residual: &[u16], col: usize) -> Result<BigUint> {
        if col == self.cols.len() {
            return Ok(if residual.is_empty() { BigUint::one() } else { BigUint::zero() });
        }
        let remaining = &self.cols[col..];
        let key = memo_key(residual, remaining);
        if let Some(v) = self.memo.get(&key) {
            return Ok(v);
        }
        let used = self.visited.fetch_add(1, Ordering::Relaxed) + 1;
        if used > self.cap {
            return Err(Error::ResourceLimit { what: "DP states", used, limit: self.cap });
        }
        let mut total = BigUint::zero();
        if gale_ryser(residual, remaining) {
            for br in branches(residual, self.cols[col] as usize, self.binom) {
                let sub = self.count(&br.residual, col + 1)?;
                if !sub.is_zero() {
                    total += sub * br.weight;
                }
            }
        }
        self.memo.insert(key, total.clone());
        Ok(total)
    }
}

fn pascal(size: usize) -> Vec<Vec<BigUint>> {
    let mut rows: Vec<Vec<BigUint>> = Vec::with_capacity(size + 1);
    for n in 0..=size {
        let mut row = vec![BigUint::one(); n + 1];
        for k in 1..n {
            row[k] = &rows[n - 1][k - 1] + &rows[n - 1][k];
        }
        rows.push(row);
    }
    rows
}

/// Exact `B(s, t)` with the default configuration.
pub fn exact_count(mp: &MarginPair) -> Result<ExactCount> {
    exact_count_with(mp, &CounterConfig::default())
}

pub fn exact_count_with(mp: &MarginPair, cfg: &CounterConfig) -> Result<ExactCount> {
    check_dims(mp)?;
    let mut rows = as_u16(mp.rows());
    rows.sort_unstable_by(|a, b| b.cmp(a));
    while rows.last() == Some(&0) {
        rows.pop();
    }
    let mut cols = as_u16(mp.cols());
    match cfg.column_order {
        ColumnOrder::Given => {}
        ColumnOrder::Ascending => cols.sort_unstable(),
        ColumnOrder::Descending => cols.sort_unstable_by(|a, b| b.cmp(a)),
    }
    let binom = pascal(mp.m());
    let visited = AtomicU64::new(0);

    let value = if cfg.parallel && gale_ryser(&rows, &cols) {
        let shared = cfg.memo.clone().unwrap_or_default();
        let top = branches(&rows, cols[0] as usize, &binom);
        let parts: Vec<Result<BigUint>> = top
            .par_iter()
            .map(|br| {
                let mut counter = Counter {
                    cols: &cols,
                    binom: &binom,
                    memo: Memo::Shared(shared.clone()),
                    visited: &visited,
                    cap: cfg.state_cap,
                };
                Ok(counter.count(&br.residual, 1)? * &br.weight)
            })
            .collect();
        let mut total = BigUint::zero();
        for p in parts {
            total += p?;
        }
        total
    } else {
        let memo = match &cfg.memo {
            Some(shared) => Memo::Shared(shared.clone()),
            None => Memo::Local(HashMap::new()),
        };
        let mut counter =
            Counter { cols: &cols, binom: &binom, memo, visited: &visited, cap: cfg.state_cap };
        counter.count(&rows, 0)?
    };
    Ok(ExactCount { value, states_visited: visited.load(Ordering::Relaxed) })
}

/// Count by enumerating all `2^(mn)` matrices; limited to `mn <= 25`.
pub fn exact_count_bruteforce(mp: &MarginPair) -> Result<ExactCount> {
    let (m, n) = (mp.m(), mp.n());
    let cells = m * n;
    if cells > BRUTE_FORCE_MAX_CELLS {
        return Err(Error::ResourceLimit {
            what: "brute-force cells",
            used: cells as u64,
            limit: BRUTE_FORCE_MAX_CELLS as u64,
        });
    }
    let s = mp.rows();
    let t = mp.cols();
    let mask = (1u64 << n) - 1;
    let total = 1u64 << cells;
    let hits = blocked_sum(total, 1 << 16, |range| {
        let mut hits = 0u64;
        'matrix: for x in range {
            for (j, &sj) in s.iter().enumerate() {
                if ((x >> (j * n)) & mask).count_ones() != sj {
                    continue 'matrix;
                }
            }
            for (k, &tk) in t.iter().enumerate() {
                let col = (0..m).filter(|j| (x >> (j * n + k)) & 1 == 1).count() as u32;
                if col != tk {
                    continue 'matrix;
                }
            }
            hits += 1;
        }
        hits
    });
    Ok(ExactCount { value: BigUint::from(hits), states_visited: total })
}
