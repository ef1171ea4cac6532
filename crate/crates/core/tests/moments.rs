use linesum_core::moments::{
    big_z, box_corrected_defect, column_instantiation, gaussian_box_log, integrate_f_direct, mw3_estimate,
    row_instantiation, theta1, theta2, MomentCoefficients,
};
use linesum_core::saddle::solve_saddle;
use linesum_core::MarginPair;
use num_complex::Complex64 as C;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_coefficients(dim: usize, ahat: f64, eps_hat: f64, seed: u64) -> MomentCoefficients {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = || {
        let (r, t): (f64, f64) = (rng.random(), rng.random_range(0.0..std::f64::consts::TAU));
        C::from_polar(r, t)
    };
    let mut mc = MomentCoefficients::gaussian(dim, ahat, eps_hat);
    for j in 0..dim {
        mc.a[j] = z();
        mc.b[j] = z();
        mc.e[j] = z();
        mc.j[j] = z();
        for k in 0..dim {
            mc.c[j][k] = z();
            mc.f[j][k] = z();
        }
    }
    mc
}

// Term-by-term evaluation with explicit index loops, written from the formula text.
fn theta1_loops(mc: &MomentCoefficients) -> C {
    let n = mc.dim;
    let nf = n as f64;
    let a = mc.ahat;
    let mut t = [C::new(0.0, 0.0); 7];
    for j in 0..n {
        t[0] += mc.a[j];
        t[1] += mc.a[j] * mc.a[j];
        t[2] += mc.b[j] * mc.b[j];
        t[5] += mc.e[j];
        for k in 0..n {
            t[3] += mc.b[j] * mc.c[j][k];
            t[6] += mc.f[j][k];
            for l in 0..n {
                t[4] += mc.c[j][k] * mc.c[j][l];
            }
        }
    }
    t[0] / (2.0 * a * nf)
        + t[1] / (4.0 * a * a * nf * nf)
        + t[2] * 15.0 / (16.0 * a * a * a * nf)
        + t[3] * 3.0 / (8.0 * a * a * a * nf * nf)
        + t[4] / (16.0 * a * a * a * nf * nf * nf)
        + t[5] * 3.0 / (4.0 * a * a * nf)
        + t[6] / (4.0 * a * a * nf * nf)
}

fn theta2_loops(mc: &MomentCoefficients) -> C {
    let n = mc.dim;
    let nf = n as f64;
    let a = mc.ahat;
    let x = &mc.a;
    let mut t = [C::new(0.0, 0.0); 8];
    for j in 0..n {
        t[0] += x[j] * x[j] * x[j];
        t[1] += x[j] * mc.e[j];
        t[2] += x[j] * mc.b[j] * mc.b[j];
        t[4] += mc.b[j] * mc.j[j];
        for k in 0..n {
            t[3] += (x[j] + x[k]) * mc.f[j][k];
            t[5] += mc.c[j][k] * mc.j[j];
            t[7] += (2.0 * x[j] + x[k]) * mc.b[j] * mc.c[j][k];
            for l in 0..n {
                t[6] += (x[j] + 2.0 * x[k]) * mc.c[j][k] * mc.c[j][l];
            }
        }
    }
    t[0] / (6.0 * a.powi(3) * nf.powi(3))
        + t[1] * 3.0 / (2.0 * a.powi(3) * nf * nf)
        + t[2] * 45.0 / (16.0 * a.powi(4) * nf * nf)
        + t[3] / (4.0 * a.powi(3) * nf.powi(3))
        + t[4] * 3.0 / (4.0 * a * a * nf)
        + t[5] / (4.0 * a * a * nf * nf)
        + t[6] / (16.0 * a.powi(4) * nf.powi(4))
        + t[7] * 3.0 / (8.0 * a.powi(4) * nf.powi(3))
}

fn big_z_loops(mc: &MomentCoefficients) -> f64 {
    let n = mc.dim;
    let nf = n as f64;
    let a = mc.ahat;
    let mut s = 0.0;
    for j in 0..n {
        s += mc.a[j].im.powi(2) / (4.0 * a * a * nf * nf) + 15.0 * mc.b[j].im.powi(2) / (16.0 * a.powi(3) * nf);
        let mut row = 0.0;
        for k in 0..n {
            s += 3.0 * mc.b[j].im * mc.c[j][k].im / (8.0 * a.powi(3) * nf * nf);
            row += mc.c[j][k].im;
        }
        s += row * row / (16.0 * a.powi(3) * nf.powi(3));
    }
    s.exp()
}

#[test]
fn double_entry_thetas() {
    for seed in 0..20 {
        for dim in 1..=5 {
            let mc = random_coefficients(dim, 0.5 + seed as f64 * 0.1, 0.3, seed * 10 + dim as u64);
            assert!((theta1(&mc) - theta1_loops(&mc)).norm() < 1e-12 * (1.0 + theta1_loops(&mc).norm()));
            assert!((theta2(&mc) - theta2_loops(&mc)).norm() < 1e-12 * (1.0 + theta2_loops(&mc).norm()));
            assert!((big_z(&mc) / big_z_loops(&mc) - 1.0).abs() < 1e-12);
            assert!(big_z(&mc) >= 1.0);
        }
    }
}

#[test]
fn real_coefficients_give_unit_z() {
    let mut mc = random_coefficients(4, 1.0, 0.3, 5);
    for v in [&mut mc.a, &mut mc.b, &mut mc.e, &mut mc.j] {
        v.iter_mut().for_each(|z| z.im = 0.0);
    }
    for m in [&mut mc.c, &mut mc.f] {
        m.iter_mut().flatten().for_each(|z| z.im = 0.0);
    }
    assert_eq!(big_z(&mc), 1.0);
}

#[test]
fn thetas_permutation_invariant() {
    let mc = random_coefficients(4, 1.3, 0.3, 77);
    let perm = [2usize, 0, 3, 1];
    let mut pm = mc.clone();
    for j in 0..4 {
        pm.a[j] = mc.a[perm[j]];
        pm.b[j] = mc.b[perm[j]];
        pm.e[j] = mc.e[perm[j]];
        pm.j[j] = mc.j[perm[j]];
        for k in 0..4 {
            pm.c[j][k] = mc.c[perm[j]][perm[k]];
            pm.f[j][k] = mc.f[perm[j]][perm[k]];
        }
    }
    assert!((theta1(&mc) - theta1(&pm)).norm() < 1e-13);
    assert!((theta2(&mc) - theta2(&pm)).norm() < 1e-13);
    assert!((big_z(&mc) - big_z(&pm)).abs() < 1e-13);
}

#[test]
fn zero_coefficients_match_gaussian_box() {
    for dim in 1..=3 {
        let mc = MomentCoefficients::gaussian(dim, 4.0, 0.45);
        let direct = integrate_f_direct(&mc, [2001, 401, 161][dim - 1]).unwrap();
        let closed = gaussian_box_log(&mc).exp();
        assert!((direct.re / closed - 1.0).abs() < 1e-9, "N={dim}");
        assert!(direct.im.abs() < 1e-15);
        assert!(box_corrected_defect(&mc, direct) < 1e-9);
    }
}

#[test]
fn single_quadratic_term() {
    // Â = 16 keeps the box tail negligible even though the box is [-1, 1] at N = 1
    let mut mc = MomentCoefficients::gaussian(1, 16.0, 0.3);
    mc.a[0] = C::new(0.1, 0.0);
    let direct = integrate_f_direct(&mc, 2001).unwrap();
    let est = mw3_estimate(&mc).exp();
    assert!(((direct - est) / est).norm() < 1e-3);
    // the full-line value is sqrt(π / 15.9); the box drops a tail near erfc(4)
    assert!((direct.re - (std::f64::consts::PI / 15.9).sqrt()).abs() < 1e-8);
}

#[test]
fn direct_quadrature_refinement_three_dim() {
    let mc = random_coefficients(3, 4.0, 0.45, 3).scaled(1e-2);
    let coarse = integrate_f_direct(&mc, 81).unwrap();
    let fine = integrate_f_direct(&mc, 161).unwrap();
    assert!(((coarse - fine) / fine).norm() < 1e-6);
}

#[test]
fn defect_shrinks_with_coefficient_scale() {
    for dim in 1..=3 {
        let base = random_coefficients(dim, 4.0, 0.45, 100 + dim as u64);
        let nodes = [2001, 401, 121][dim - 1];
        let defects: Vec<f64> = [1e-1, 1e-2, 1e-3]
            .iter()
            .map(|&s| {
                let mc = base.scaled(s);
                box_corrected_defect(&mc, integrate_f_direct(&mc, nodes).unwrap())
            })
            .collect();
        eprintln!("N={dim} defects {defects:?}");
        assert!(defects[1] < 1e-3);
        assert!(defects[0] > defects[1] && defects[1] > defects[2]);
    }
}

#[test]
fn instantiations_from_saddle() {
    // small instances push the box exponent past 1/2
    let s: Vec<u32> = (0..20).map(|j| 9 + (j % 3) as u32).collect();
    let mp = MarginPair::new(s.clone(), s).unwrap();
    let sol = solve_saddle(&mp, 1e-13, 200).unwrap();
    let row = row_instantiation(&sol, 0.1).unwrap();
    let col = column_instantiation(&sol, 0.1).unwrap();
    assert_eq!((row.dim, col.dim), (19, 19));
    row.validate().unwrap();
    col.validate().unwrap();
    assert!((row.ahat - sol.a_const * 20.0 / 19.0).abs() < 1e-15);
    // B is purely imaginary, a and E real
    assert!(row.b.iter().all(|z| z.re == 0.0) && row.a.iter().all(|z| z.im == 0.0));
    assert!(big_z(&row) >= 1.0 && big_z(&col) >= 1.0);
    assert!(mw3_estimate(&row).re.is_finite());
    let s1 = solve_saddle(&MarginPair::new(vec![1, 1], vec![1, 1]).unwrap(), 1e-13, 200).unwrap();
    assert!(row_instantiation(&s1, 0.1).is_err());
}
