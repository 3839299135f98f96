//! End-to-end gradient checks of the CCA projection layer and its behavior
//! contracts (statistics purity, output whitening, determinism).

mod common;

use ccal::layer::CcaLayer;
use ccal::loss::{ranking_loss, ranking_loss_adjoint, LossConfig};
use ccal::mat::Mat;
use common::*;

const H: f64 = 1e-5;
const TOL: f64 = 1e-5;

fn layer_loss_weighted(
    x: &Mat,
    y: &Mat,
    k: usize,
    reg: f64,
    wx: &Mat,
    wy: &Mat,
) -> f64 {
    let mut layer = CcaLayer::new(k, reg);
    let (xs, ys, _) = layer.forward_train(x, y).unwrap();
    xs.dot(wx) + ys.dot(wy)
}

#[test]
fn backward_matches_finite_differences_for_sum_loss() {
    let (m, d, k) = (64, 8, 4);
    let mut r = rng(50);
    let x = random_mat(&mut r, m, d);
    let y = random_mat(&mut r, m, d);
    let reg = 1e-3;

    // Loss: plain sum of all projected entries on both sides.
    let ones = Mat::from_vec(m, k, vec![1.0; m * k]).unwrap();
    let mut layer = CcaLayer::new(k, reg);
    let (_, _, tape) = layer.forward_train(&x, &y).unwrap();
    let (gx, gy) = layer.backward(&tape, &ones, &ones).unwrap();

    let analytic = pack(&[&gx, &gy]);
    let theta = pack(&[&x, &y]);
    let shapes = [(m, d), (m, d)];
    let mut f = |t: &[f64]| {
        let mats = unpack(t, &shapes);
        layer_loss_weighted(&mats[0], &mats[1], k, reg, &ones, &ones)
    };
    let fd = central_diff(&mut f, &theta, H);
    let err = max_rel_err(&analytic, &fd);
    assert!(err < TOL, "max rel err {err}");
}

#[test]
fn backward_matches_finite_differences_for_weighted_loss() {
    let (m, d, k) = (32, 6, 3);
    let mut r = rng(51);
    let x = random_mat(&mut r, m, d);
    let y = random_mat(&mut r, m, d);
    let wx = random_mat(&mut r, m, k);
    let wy = random_mat(&mut r, m, k);
    let reg = 1e-3;

    let mut layer = CcaLayer::new(k, reg);
    let (_, _, tape) = layer.forward_train(&x, &y).unwrap();
    let (gx, gy) = layer.backward(&tape, &wx, &wy).unwrap();

    let analytic = pack(&[&gx, &gy]);
    let theta = pack(&[&x, &y]);
    let shapes = [(m, d), (m, d)];
    let mut f = |t: &[f64]| {
        let mats = unpack(t, &shapes);
        layer_loss_weighted(&mats[0], &mats[1], k, reg, &wx, &wy)
    };
    let fd = central_diff(&mut f, &theta, H);
    let err = max_rel_err(&analytic, &fd);
    assert!(err < TOL, "max rel err {err}");
}

#[test]
fn backward_matches_finite_differences_through_ranking_loss() {
    let (m, d, k) = (24, 6, 3);
    let mut r = rng(52);
    let x = random_mat(&mut r, m, d);
    let y = random_mat(&mut r, m, d);
    let reg = 1e-3;
    let cfg = LossConfig::new(0.7, false).unwrap();

    let mut layer = CcaLayer::new(k, reg);
    let (xs, ys, tape) = layer.forward_train(&x, &y).unwrap();
    let (gxs, gys) = ranking_loss_adjoint(&xs, &ys, &cfg).unwrap();
    let (gx, gy) = layer.backward(&tape, &gxs, &gys).unwrap();

    let analytic = pack(&[&gx, &gy]);
    let theta = pack(&[&x, &y]);
    let shapes = [(m, d), (m, d)];
    let mut f = |t: &[f64]| {
        let mats = unpack(t, &shapes);
        let mut l = CcaLayer::new(k, reg);
        let (xs, ys, _) = l.forward_train(&mats[0], &mats[1]).unwrap();
        ranking_loss(&xs, &ys, &cfg).unwrap()
    };
    let fd = central_diff(&mut f, &theta, H);
    let err = max_rel_err(&analytic, &fd);
    assert!(err < TOL, "max rel err {err}");
}

#[test]
fn backward_dot_test_over_random_directions() {
    let (m, d, k) = (40, 7, 3);
    let mut r = rng(53);
    let x = random_mat(&mut r, m, d);
    let y = random_mat(&mut r, m, d);
    let wx = random_mat(&mut r, m, k);
    let wy = random_mat(&mut r, m, k);
    let reg = 1e-3;

    let mut layer = CcaLayer::new(k, reg);
    let (_, _, tape) = layer.forward_train(&x, &y).unwrap();
    let (gx, gy) = layer.backward(&tape, &wx, &wy).unwrap();

    let grad = pack(&[&gx, &gy]);
    let theta = pack(&[&x, &y]);
    let shapes = [(m, d), (m, d)];
    let mut f = |t: &[f64]| {
        let mats = unpack(t, &shapes);
        layer_loss_weighted(&mats[0], &mats[1], k, reg, &wx, &wy)
    };
    let worst = dot_test(&mut f, &grad, &theta, H, 10, 530);
    assert!(worst < TOL, "dot test worst {worst}");
}

#[test]
fn eval_does_not_mutate_state() {
    let (m, d, k) = (20, 5, 2);
    let mut r = rng(54);
    let x = random_mat(&mut r, m, d);
    let y = random_mat(&mut r, m, d);
    let mut layer = CcaLayer::new(k, 1e-3);
    layer.forward_train(&x, &y).unwrap();

    let before = format!("{:?}", layer.state().unwrap());
    let probe_x = random_mat(&mut r, 7, d);
    let probe_y = random_mat(&mut r, 7, d);
    layer.forward_eval(&probe_x, &probe_y).unwrap();
    let after = format!("{:?}", layer.state().unwrap());
    assert_eq!(before, after);
}

#[test]
fn training_outputs_are_whitened() {
    let (m, d, k) = (50, 6, 4);
    let mut r = rng(55);
    let x = random_mat(&mut r, m, d);
    let y = random_mat(&mut r, m, d);
    let mut layer = CcaLayer::new(k, 1e-8);
    let (xs, ys, _) = layer.forward_train(&x, &y).unwrap();

    let scale = 1.0 / (m as f64 - 1.0);
    let cxx = xs.tn_mul(&xs).scaled(scale);
    let cyy = ys.tn_mul(&ys).scaled(scale);
    assert!(cxx.sub(&Mat::identity(k)).max_abs() <= 1e-6);
    assert!(cyy.sub(&Mat::identity(k)).max_abs() <= 1e-6);

    // Diagonal cross-correlation equals the stored correlations.
    let cxy = xs.tn_mul(&ys).scaled(scale);
    let corr = &layer.state().unwrap().corr;
    for i in 0..k {
        assert!((cxy.get(i, i) - corr[i]).abs() <= 1e-8);
    }
}
