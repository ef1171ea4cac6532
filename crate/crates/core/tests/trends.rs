//! Closed-form approximations approach the converged saddle as the instance
//! grows with deviations of order sqrt(n).

use linesum_core::saddle::{
    log_prefactor, log_prefactor_approx, moment_expansions, solve_saddle, third_iterate_approx, third_iterate_z, z_exact,
};
use linesum_core::{compute_stats, MarginPair};

/// `n = 6k^2`, density 1/3, deviations of size k around the mean.
fn family(k: usize) -> MarginPair {
    let n = 6 * k * k;
    let mean = (n / 3) as i64;
    let row = [2i64, 1, 0, 0, -1, -2];
    let col = [1i64, 1, 0, 0, -1, -1];
    let s = (0..n).map(|i| (mean + row[i % 6] * k as i64) as u32).collect();
    let t = (0..n).map(|i| (mean + col[i % 6] * k as i64) as u32).collect();
    MarginPair::new(s, t).unwrap()
}

struct Gaps {
    iterate: f64,
    z: f64,
    variance: f64,
    skewness: f64,
    prefactor: f64,
}

fn gaps(mp: &MarginPair) -> Gaps {
    let stats = compute_stats(mp);
    let sol = solve_saddle(mp, 1e-14, 500).unwrap();
    let (a3, b3) = third_iterate_approx(&stats, mp).unwrap();
    let iterate = a3.iter().zip(&sol.a).chain(b3.iter().zip(&sol.b)).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let z_approx = third_iterate_z(&stats, mp).unwrap();
    let r2 = sol.r * sol.r;
    let mut z = 0.0f64;
    for j in 0..mp.m() {
        for k in 0..mp.n() {
            z = z.max((z_approx.at(j, k) - z_exact(sol.a[j], sol.b[k], r2)).abs());
        }
    }
    let ex = moment_expansions(&stats, mp).unwrap();
    let (mut variance, mut skewness) = (0.0f64, 0.0f64);
    for (i, &l) in sol.lambda_jk.data.iter().enumerate() {
        variance = variance.max((ex.variance.data[i] - l * (1.0 - l)).abs());
        skewness = skewness.max((ex.skewness.data[i] - l * (1.0 - l) * (1.0 - 2.0 * l)).abs());
    }
    let prefactor = (log_prefactor_approx(&stats, mp).unwrap() - log_prefactor(&sol, mp).unwrap()).abs();
    Gaps { iterate, z, variance, skewness, prefactor }
}

#[test]
fn approximations_improve_with_size() {
    let all: Vec<Gaps> = [2, 3, 4, 6, 8].iter().map(|&k| gaps(&family(k))).collect();
    let check = |name: &str, f: fn(&Gaps) -> f64| {
        let v: Vec<f64> = all.iter().map(f).collect();
        eprintln!("{name}: {v:?}");
        assert!(v.windows(2).all(|w| w[1] < w[0]), "{name} not decreasing: {v:?}");
    };
    check("third iterate", |g| g.iterate);
    check("Z", |g| g.z);
    check("variance", |g| g.variance);
    check("skewness", |g| g.skewness);
    check("prefactor", |g| g.prefactor);
}

#[test]
fn semiregular_expansions_are_exact() {
    let mp = MarginPair::semiregular(9, 3, 9, 3).unwrap();
    let g = gaps(&mp);
    assert!(g.iterate < 1e-15 && g.z < 1e-15 && g.variance < 1e-15 && g.skewness < 1e-15);
}
