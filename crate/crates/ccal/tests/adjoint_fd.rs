//! Finite-difference verification of the decomposition adjoint rules, plus
//! the algebraic matrix-module properties.

mod common;

use ccal::mat::{
    cholesky_adjoint, cholesky_lower, eig_sym, eig_sym_adjoint, invert_lower,
    invert_lower_adjoint, Mat,
};
use common::*;
use rand::Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-5;

/// Scalar probe loss: weighted sum of the entries of a matrix.
fn weighted_sum(m: &Mat, w: &Mat) -> f64 {
    m.dot(w)
}

#[test]
fn cholesky_adjoint_matches_finite_differences() {
    let mut r = rng(11);
    let s = random_spd(&mut r, 6);
    let w = random_mat(&mut r, 6, 6);

    let l = cholesky_lower(&s).unwrap();
    // Loss touches only the lower triangle, like any consumer of L.
    let lbar = w.tril();
    let analytic = cholesky_adjoint(&l, &lbar).unwrap();

    let theta = pack(&[&s]);
    let mut f = |t: &[f64]| {
        let s = unpack(t, &[(6, 6)]).pop().unwrap().sym();
        weighted_sum(&cholesky_lower(&s).unwrap(), &lbar)
    };
    // The finite difference perturbs single entries; the forward symmetrizes,
    // so compare against the symmetrized analytic adjoint (equal here since
    // the rule already returns a symmetric matrix) evaluated entrywise with
    // the same symmetrization: d/dS_ij of f(sym(S)) = (Sbar_ij + Sbar_ji)/2.
    let fd = central_diff(&mut f, &theta, H);
    let analytic_flat = pack(&[&analytic]);
    let err = max_rel_err(&analytic_flat, &fd);
    assert!(err < TOL, "max rel err {err}");
}

#[test]
fn invert_lower_adjoint_matches_finite_differences() {
    let mut r = rng(12);
    let spd = random_spd(&mut r, 5);
    let l = cholesky_lower(&spd).unwrap();
    let w = random_mat(&mut r, 5, 5);

    let inv = invert_lower(&l).unwrap();
    let analytic = invert_lower_adjoint(&inv, &w).unwrap();

    let theta = pack(&[&l]);
    let mut f = |t: &[f64]| {
        let lt = unpack(t, &[(5, 5)]).pop().unwrap().tril();
        weighted_sum(&invert_lower(&lt).unwrap(), &w)
    };
    let fd = central_diff(&mut f, &theta, H);
    // Only the lower triangle participates; the analytic rule zeroes the
    // rest, and the forward's tril() makes the FD zero there too.
    let err = max_rel_err(&pack(&[&analytic]), &fd);
    assert!(err < TOL, "max rel err {err}");
}

#[test]
fn eig_adjoint_matches_finite_differences_for_values_and_vectors() {
    let mut r = rng(13);
    // Random symmetric 6x6 via U diag(e) U' with well-separated eigenvalues.
    let u = random_orthonormal(&mut r, 6);
    let e = [5.0, 3.5, 2.2, 1.4, 0.9, 0.2];
    let mut s = Mat::zeros(6, 6);
    for i in 0..6 {
        for j in 0..6 {
            let mut acc = 0.0;
            for (t, ev) in e.iter().enumerate() {
                acc += u.get(i, t) * ev * u.get(j, t);
            }
            s.set(i, j, acc);
        }
    }
    let s = s.sym();
    let ebar: Vec<f64> = (0..6).map(|_| r.sample::<f64, _>(rand_distr::StandardNormal)).collect();
    let ubar = random_mat(&mut r, 6, 6);

    let eig = eig_sym(&s).unwrap();
    let analytic = eig_sym_adjoint(&eig, &ebar, &ubar).unwrap();

    let theta = pack(&[&s]);
    let mut f = |t: &[f64]| {
        let st = unpack(t, &[(6, 6)]).pop().unwrap().sym();
        let eg = eig_sym(&st).unwrap();
        let val: f64 = eg.values.iter().zip(&ebar).map(|(a, b)| a * b).sum();
        val + eg.vectors.dot(&ubar)
    };
    let fd = central_diff(&mut f, &theta, H);
    let err = max_rel_err(&pack(&[&analytic]), &fd);
    assert!(err < TOL, "max rel err {err}");
}

#[test]
fn adjoint_dot_tests_on_random_directions() {
    let mut r = rng(14);

    // Cholesky.
    let s = random_spd(&mut r, 5);
    let w = random_mat(&mut r, 5, 5).tril();
    let l = cholesky_lower(&s).unwrap();
    let sbar = cholesky_adjoint(&l, &w).unwrap();
    let theta = pack(&[&s]);
    let mut f = |t: &[f64]| {
        let st = unpack(t, &[(5, 5)]).pop().unwrap().sym();
        cholesky_lower(&st).unwrap().dot(&w)
    };
    let worst = dot_test(&mut f, &pack(&[&sbar]), &theta, H, 10, 140);
    assert!(worst < TOL, "cholesky dot test {worst}");

    // Triangular inverse.
    let l2 = cholesky_lower(&random_spd(&mut r, 5)).unwrap();
    let w2 = random_mat(&mut r, 5, 5);
    let inv = invert_lower(&l2).unwrap();
    let lbar = invert_lower_adjoint(&inv, &w2).unwrap();
    let theta2 = pack(&[&l2]);
    let mut f2 = |t: &[f64]| {
        let lt = unpack(t, &[(5, 5)]).pop().unwrap().tril();
        invert_lower(&lt).unwrap().dot(&w2)
    };
    let worst2 = dot_test(&mut f2, &pack(&[&lbar]), &theta2, H, 10, 141);
    assert!(worst2 < TOL, "inverse dot test {worst2}");

    // Eigendecomposition.
    let s3 = {
        let u = random_orthonormal(&mut r, 5);
        let e = [4.0, 2.5, 1.5, 0.8, 0.3];
        let mut s = Mat::zeros(5, 5);
        for i in 0..5 {
            for j in 0..5 {
                let mut acc = 0.0;
                for (t, ev) in e.iter().enumerate() {
                    acc += u.get(i, t) * ev * u.get(j, t);
                }
                s.set(i, j, acc);
            }
        }
        s.sym()
    };
    let ubar = random_mat(&mut r, 5, 5);
    let ebar: Vec<f64> = (0..5).map(|_| r.sample::<f64, _>(rand_distr::StandardNormal)).collect();
    let eig = eig_sym(&s3).unwrap();
    let sbar3 = eig_sym_adjoint(&eig, &ebar, &ubar).unwrap();
    let theta3 = pack(&[&s3]);
    let mut f3 = |t: &[f64]| {
        let st = unpack(t, &[(5, 5)]).pop().unwrap().sym();
        let eg = eig_sym(&st).unwrap();
        let val: f64 = eg.values.iter().zip(&ebar).map(|(a, b)| a * b).sum();
        val + eg.vectors.dot(&ubar)
    };
    let worst3 = dot_test(&mut f3, &pack(&[&sbar3]), &theta3, H, 10, 142);
    assert!(worst3 < TOL, "eig dot test {worst3}");
}

#[test]
fn eig_recovers_constructed_spectrum() {
    for seed in 0..5u64 {
        let mut r = rng(100 + seed);
        let n = 6;
        let u = random_orthonormal(&mut r, n);
        let e = [7.0, 4.0, 2.0, 1.0, 0.5, 0.1];
        let mut s = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for (t, ev) in e.iter().enumerate() {
                    acc += u.get(i, t) * ev * u.get(j, t);
                }
                s.set(i, j, acc);
            }
        }
        let eig = eig_sym(&s.sym()).unwrap();
        for (got, want) in eig.values.iter().zip(&e) {
            assert!((got - want).abs() <= 1e-9, "{got} vs {want}");
        }
        // Vectors match up to sign.
        for j in 0..n {
            let mut same = 0.0f64;
            let mut flip = 0.0f64;
            for i in 0..n {
                same = same.max((eig.vectors.get(i, j) - u.get(i, j)).abs());
                flip = flip.max((eig.vectors.get(i, j) + u.get(i, j)).abs());
            }
            assert!(same <= 1e-8 || flip <= 1e-8, "column {j}: {same} / {flip}");
        }
    }
}

#[test]
fn eig_invariants_hold_on_random_symmetric_input() {
    let mut r = rng(15);
    let g = random_mat(&mut r, 7, 7);
    let s = g.sym();
    let eig = eig_sym(&s).unwrap();

    // Orthonormality.
    let utu = eig.vectors.tn_mul(&eig.vectors);
    assert!(utu.sub(&Mat::identity(7)).max_abs() <= 1e-10);

    // Descending order.
    for w in eig.values.windows(2) {
        assert!(w[0] >= w[1]);
    }

    // Reconstruction within relative Frobenius tolerance.
    let mut rec = Mat::zeros(7, 7);
    for i in 0..7 {
        for j in 0..7 {
            let mut acc = 0.0;
            for (t, ev) in eig.values.iter().enumerate() {
                acc += eig.vectors.get(i, t) * ev * eig.vectors.get(j, t);
            }
            rec.set(i, j, acc);
        }
    }
    assert!(rec.sub(&s).frob_norm() <= 1e-9 * s.frob_norm());

    // Sign convention: largest-magnitude entry of each column is positive.
    for j in 0..7 {
        let mut best = 0usize;
        for i in 1..7 {
            if eig.vectors.get(i, j).abs() > eig.vectors.get(best, j).abs() {
                best = i;
            }
        }
        assert!(eig.vectors.get(best, j) > 0.0);
    }
}

#[test]
fn whitening_composition_gives_identity() {
    for seed in 0..5u64 {
        let mut r = rng(200 + seed);
        let s = random_spd(&mut r, 6);
        let l = cholesky_lower(&s).unwrap();
        let j = invert_lower(&l).unwrap();
        let white = j.mul(&s).nt_mul(&j);
        assert!(white.sub(&Mat::identity(6)).max_abs() <= 1e-9);
    }
}
