//! Quadrature and reduction helpers.
//!
//! Parallel reductions here are deterministic: work is cut into fixed-size
//! blocks independent of the worker count, each block is summed sequentially,
//! and the per-block partial sums are combined by pairwise summation in index
//! order.

use std::ops::{Add, Range};

use rayon::prelude::*;

/// Pairwise (tree) summation of a slice in index order.
pub fn tree_sum<T>(values: &[T]) -> T
where
    T: Copy + Default + Add<Output = T>,
{
    match values.len() {
        0 => T::default(),
        1 => values[0],
        len => {
            let (lo, hi) = values.split_at(len / 2);
            tree_sum(lo) + tree_sum(hi)
        }
    }
}

/// Sum `block_fn` over `0..count` cut into blocks of `block` indices.
pub fn blocked_sum<T, F>(count: u64, block: u64, block_fn: F) -> T
where
    T: Copy + Default + Add<Output = T> + Send,
    F: Fn(Range<u64>) -> T + Sync,
{
    let block = block.max(1);
    let blocks = count.div_ceil(block);
    let partials: Vec<T> = (0..blocks)
        .into_par_iter()
        .map(|b| block_fn(b * block..((b + 1) * block).min(count)))
        .collect();
    tree_sum(&partials)
}

fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
    h / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(fa, flm, fm, m - a);
    let right = simpson(fm, frm, fb, b - m);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + adaptive_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
///
/// The interval is pre-split into 64 panels so narrow peaks are not missed by
/// the first coarse estimate.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    const PANELS: usize = 64;
    let h = (b - a) / PANELS as f64;
    let mut parts = Vec::with_capacity(PANELS);
    for i in 0..PANELS {
        let lo = a + h * i as f64;
        let hi = if i + 1 == PANELS { b } else { lo + h };
        let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
        let whole = simpson(fa, fm, fb, hi - lo);
        parts.push(adaptive_step(&f, lo, hi, fa, fm, fb, whole, tol / PANELS as f64, 40));
    }
    tree_sum(&parts)
}

/// Nodes and weights of the composite Simpson rule on `[-half, half]`
/// with `nodes` points (`nodes` odd and at least 3).
pub fn simpson_rule(half: f64, nodes: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(nodes >= 3 && nodes % 2 == 1, "Simpson needs an odd node count >= 3");
    let h = 2.0 * half / (nodes - 1) as f64;
    let xs = (0..nodes).map(|i| -half + h * i as f64).collect();
    let ws = (0..nodes)
        .map(|i| {
            let c = if i == 0 || i == nodes - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * h / 3.0
        })
        .collect();
    (xs, ws)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tree_sum_matches_naive() {
        let v: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(tree_sum(&v), 500_500.0);
        assert_eq!(tree_sum::<f64>(&[]), 0.0);
    }

    #[test]
    fn blocked_sum_independent_of_pool_size() {
        let f = |r: Range<u64>| r.map(|i| (i as f64).sin()).sum::<f64>();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| blocked_sum(100_003, 97, f));
        let b = four.install(|| blocked_sum(100_003, 97, f));
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn adaptive_gaussian() {
        let got = adaptive_simpson(|x| (-x * x).exp(), -10.0, 10.0, 1e-13);
        assert!((got - std::f64::consts::PI.sqrt()).abs() < 1e-12);
        let narrow = adaptive_simpson(|x| (-1e4 * x * x).exp(), -0.3, 0.3, 1e-14);
        assert!((narrow - (std::f64::consts::PI / 1e4).sqrt()).abs() < 1e-13);
    }

    #[test]
    fn simpson_integrates_cubics_exactly() {
        let (xs, ws) = simpson_rule(1.5, 7);
        let s: f64 = xs.iter().zip(&ws).map(|(x, w)| w * (x * x * x + 2.0 * x * x + 1.0)).sum();
        assert!((s - (2.0 * 2.0 * 1.5f64.powi(3) / 3.0 + 3.0)).abs() < 1e-12);
    }
}
