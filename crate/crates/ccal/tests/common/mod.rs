//! Shared helpers for the integration tests: finite-difference oracles, a
//! power-iteration singular-value oracle, and seeded random inputs. These
//! stay independent of the adjoint implementations they are used to check.

#![allow(dead_code)]

use ccal::mat::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Mat::from_vec(rows, cols, data).unwrap()
}

/// Random symmetric positive definite matrix `G G' + eps I`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> Mat {
    let g = random_mat(rng, n, n);
    let mut s = g.nt_mul(&g);
    s.add_scaled_identity(0.5);
    s
}

/// Random square matrix with orthonormal columns (Gram-Schmidt on Gaussian
/// draws).
pub fn random_orthonormal(rng: &mut ChaCha8Rng, n: usize) -> Mat {
    let mut q = Mat::zeros(n, n);
    for j in 0..n {
        let mut col: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for prev in 0..j {
            let proj: f64 = (0..n).map(|i| col[i] * q.get(i, prev)).sum();
            for (i, v) in col.iter_mut().enumerate() {
                *v -= proj * q.get(i, prev);
            }
        }
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (i, v) in col.iter().enumerate() {
            q.set(i, j, v / norm);
        }
    }
    q
}

/// Central finite differences of a scalar function over a flat vector.
pub fn central_diff(f: &mut dyn FnMut(&[f64]) -> f64, theta: &[f64], h: f64) -> Vec<f64> {
    let mut work = theta.to_vec();
    let mut grad = vec![0.0; theta.len()];
    for i in 0..theta.len() {
        let saved = work[i];
        work[i] = saved + h;
        let up = f(&work);
        work[i] = saved - h;
        let down = f(&work);
        work[i] = saved;
        grad[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Relative error with an absolute floor so noise on near-zero entries does
/// not dominate.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

pub fn max_rel_err(analytic: &[f64], fd: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(fd)
        .map(|(&a, &b)| rel_err(a, b))
        .fold(0.0, f64::max)
}

/// Directional-derivative (dot-product) gradient test: for random unit
/// directions `delta`, `<grad, delta>` must match the central difference of
/// `f` along `delta`.
pub fn dot_test(
    f: &mut dyn FnMut(&[f64]) -> f64,
    grad: &[f64],
    theta: &[f64],
    h: f64,
    n_dirs: usize,
    seed: u64,
) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..n_dirs {
        let mut delta: Vec<f64> = (0..theta.len()).map(|_| r.sample(StandardNormal)).collect();
        let norm = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
        for d in &mut delta {
            *d /= norm;
        }
        let analytic: f64 = grad.iter().zip(&delta).map(|(g, d)| g * d).sum();
        let up: Vec<f64> = theta.iter().zip(&delta).map(|(t, d)| t + h * d).collect();
        let down: Vec<f64> = theta.iter().zip(&delta).map(|(t, d)| t - h * d).collect();
        let fd = (f(&up) - f(&down)) / (2.0 * h);
        worst = worst.max(rel_err(analytic, fd));
    }
    worst
}

/// Singular values of `t` (descending) by power iteration with deflation on
/// `t' t`; independent of the Jacobi eigensolver.
pub fn singular_values_power_iteration(t: &Mat, k: usize, seed: u64) -> Vec<f64> {
    let mut m = t.tn_mul(t); // t' t, n x n
    let n = m.rows();
    let mut r = rng(seed);
    let mut values = Vec::with_capacity(k);
    for _ in 0..k.min(n) {
        let mut v: Vec<f64> = (0..n).map(|_| r.sample(StandardNormal)).collect();
        normalize(&mut v);
        let mut lambda = 0.0;
        for _ in 0..200_000 {
            let mut w = vec![0.0; n];
            for i in 0..n {
                let row = m.row(i);
                w[i] = row.iter().zip(&v).map(|(a, b)| a * b).sum();
            }
            let new_lambda: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                lambda = 0.0;
                break;
            }
            for (vi, wi) in v.iter_mut().zip(&w) {
                *vi = wi / norm;
            }
            if (new_lambda - lambda).abs() <= 1e-15 * new_lambda.abs().max(1.0) {
                lambda = new_lambda;
                break;
            }
            lambda = new_lambda;
        }
        values.push(lambda.max(0.0).sqrt());
        // Deflate the found eigenpair.
        for i in 0..n {
            for j in 0..n {
                let mij = m.get(i, j) - lambda * v[i] * v[j];
                m.set(i, j, mij);
            }
        }
    }
    values
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in v {
        *x /= norm;
    }
}

/// Flatten matrices into one parameter vector.
pub fn pack(mats: &[&Mat]) -> Vec<f64> {
    mats.iter().flat_map(|m| m.data().iter().copied()).collect()
}

/// Rebuild matrices of the given shapes from a flat vector.
pub fn unpack(theta: &[f64], shapes: &[(usize, usize)]) -> Vec<Mat> {
    let mut out = Vec::with_capacity(shapes.len());
    let mut at = 0;
    for &(r, c) in shapes {
        out.push(Mat::from_vec(r, c, theta[at..at + r * c].to_vec()).unwrap());
        at += r * c;
    }
    out
}
