//! Central-difference verification of every analytic adjoint path: the CCA
//! layer, the trace-norm objective, the ranking loss, plain MLP backprop,
//! and the full end-to-end chain (towers, CCA layer, ranking loss).

use super::derive_seed;
use super::mlp::{mlp_backward, mlp_forward, Tower, TowerSpec};
use crate::cca::{tno_gradient, tno_value};
use crate::error::{Error, Result};
use crate::layer::CcaLayer;
use crate::loss::{ranking_loss, ranking_loss_adjoint, LossConfig};
use crate::mat::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::fmt;

/// Cap on the number of probed scalars; central differences are O(n) full
/// evaluations per scalar.
const MAX_PROBES: usize = 2000;

/// Denominator floor for the relative error, so finite-difference noise on
/// near-zero entries does not dominate the verdict.
const REL_FLOOR: f64 = 1e-3;

/// Margin used by the ranking-based targets.
const CHECK_MARGIN: f64 = 0.7;

/// A base point is rejected (and regenerated) when a hinge sits closer than
/// this to its kink, or an exercised eigenvalue gap is smaller than this.
const REGEN_HINGE_TOL: f64 = 1e-4;
const REGEN_GAP_TOL: f64 = 1e-3;

const MAX_ATTEMPTS: usize = 5;

/// Which adjoint path to verify.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradTarget {
    CcaLayer,
    Tno,
    Ranking,
    Mlp,
    EndToEnd,
}

impl GradTarget {
    pub const ALL: [GradTarget; 5] = [
        GradTarget::CcaLayer,
        GradTarget::Tno,
        GradTarget::Ranking,
        GradTarget::Mlp,
        GradTarget::EndToEnd,
    ];
}

impl fmt::Display for GradTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            GradTarget::CcaLayer => "cca-layer",
            GradTarget::Tno => "tno",
            GradTarget::Ranking => "ranking",
            GradTarget::Mlp => "mlp",
            GradTarget::EndToEnd => "end-to-end",
        };
        write!(f, "{name}")
    }
}

impl std::str::FromStr for GradTarget {
    type Err = Error;
    fn from_str(s: &str) -> Result<GradTarget> {
        match s {
            "cca-layer" => Ok(GradTarget::CcaLayer),
            "tno" => Ok(GradTarget::Tno),
            "ranking" => Ok(GradTarget::Ranking),
            "mlp" => Ok(GradTarget::Mlp),
            "end-to-end" => Ok(GradTarget::EndToEnd),
            other => Err(Error::contract(format!(
                "unknown gradient-check target '{other}'"
            ))),
        }
    }
}

/// Problem dimensions and the finite-difference step/tolerance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckSettings {
    /// Batch size.
    pub m: usize,
    /// Input width of both views.
    pub d: usize,
    /// Embedding width.
    pub k: usize,
    /// Covariance regularization.
    pub reg: f64,
    /// Central-difference step.
    pub h: f64,
    /// Pass threshold on the max relative error.
    pub tol: f64,
    pub seed: u64,
}

impl Default for GradCheckSettings {
    fn default() -> Self {
        GradCheckSettings {
            m: 64,
            d: 8,
            k: 4,
            reg: 1e-3,
            h: 1e-5,
            tol: 1e-4,
            seed: 0,
        }
    }
}

/// Result of one gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub target: GradTarget,
    pub max_rel_err: f64,
    pub probes: usize,
    pub pass: bool,
}

fn rel_err(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(REL_FLOOR)
}

fn random_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Mat::from_raw(rows, cols, data)
}

enum CheckOutcome {
    Done(GradCheckReport),
    Retry,
}

/// Compare an analytic gradient against central differences of `eval` over
/// the flat parameter vector `theta`.
fn compare<F>(
    target: GradTarget,
    theta: &mut [f64],
    analytic: &[f64],
    mut eval: F,
    h: f64,
    tol: f64,
) -> Result<CheckOutcome>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    assert_eq!(theta.len(), analytic.len());
    let mut max_err = 0.0f64;
    for i in 0..theta.len() {
        let saved = theta[i];
        theta[i] = saved + h;
        let up = match eval(theta) {
            Ok(v) => v,
            Err(Error::DegenerateSpectrum { .. }) => return Ok(CheckOutcome::Retry),
            Err(e) => return Err(e),
        };
        theta[i] = saved - h;
        let down = match eval(theta) {
            Ok(v) => v,
            Err(Error::DegenerateSpectrum { .. }) => return Ok(CheckOutcome::Retry),
            Err(e) => return Err(e),
        };
        theta[i] = saved;
        let fd = (up - down) / (2.0 * h);
        max_err = max_err.max(rel_err(analytic[i], fd));
    }
    Ok(CheckOutcome::Done(GradCheckReport {
        target,
        max_rel_err: max_err,
        probes: theta.len(),
        pass: max_err < tol,
    }))
}

fn check_probe_budget(n: usize) -> Result<()> {
    if n > MAX_PROBES {
        return Err(Error::contract(format!(
            "gradient check would probe {n} scalars (cap {MAX_PROBES}); shrink the dims"
        )));
    }
    Ok(())
}

/// Smallest |hinge| over all contrastive terms; used to keep the base point
/// away from the kink.
fn min_hinge_margin(xs: &Mat, ys: &Mat, cfg: &LossConfig) -> Result<f64> {
    let m = xs.rows();
    let mut min_abs = f64::INFINITY;
    for i in 0..m {
        let sii = crate::loss::cosine_score(xs.row(i), ys.row(i))?;
        for j in 0..m {
            if j == i {
                continue;
            }
            let sij = crate::loss::cosine_score(xs.row(i), ys.row(j))?;
            min_abs = min_abs.min((cfg.margin - sii + sij).abs());
        }
    }
    Ok(min_abs)
}

fn pack(mats: &[&Mat]) -> Vec<f64> {
    mats.iter().flat_map(|m| m.data().iter().copied()).collect()
}

fn unpack(theta: &[f64], shapes: &[(usize, usize)]) -> Vec<Mat> {
    let mut out = Vec::with_capacity(shapes.len());
    let mut at = 0;
    for &(r, c) in shapes {
        out.push(Mat::from_raw(r, c, theta[at..at + r * c].to_vec()));
        at += r * c;
    }
    out
}

fn tower_params(t: &Tower) -> Vec<f64> {
    let mut out = Vec::with_capacity(t.param_count());
    for l in t.layers() {
        out.extend_from_slice(l.weights.data());
        out.extend_from_slice(&l.bias);
    }
    out
}

fn set_tower_params(t: &mut Tower, theta: &[f64]) {
    let mut at = 0;
    for l in t.layers_mut() {
        let nw = l.weights.data().len();
        l.weights.data_mut().copy_from_slice(&theta[at..at + nw]);
        at += nw;
        let nb = l.bias.len();
        l.bias.copy_from_slice(&theta[at..at + nb]);
        at += nb;
    }
}

fn tower_grads_flat(g: &super::mlp::TowerGrads) -> Vec<f64> {
    let mut out = Vec::new();
    for (w, b) in g.weights.iter().zip(&g.biases) {
        out.extend_from_slice(w.data());
        out.extend_from_slice(b);
    }
    out
}

fn check_cca_layer(s: &GradCheckSettings, seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_mat(&mut rng, s.m, s.d);
    let y = random_mat(&mut rng, s.m, s.d);
    let wx = random_mat(&mut rng, s.m, s.k);
    let wy = random_mat(&mut rng, s.m, s.k);
    check_probe_budget(2 * s.m * s.d)?;

    let mut layer = CcaLayer::new(s.k, s.reg);
    let (_, _, tape) = match layer.forward_train(&x, &y) {
        Ok(v) => v,
        Err(Error::DegenerateSpectrum { .. }) => return Ok(CheckOutcome::Retry),
        Err(e) => return Err(e),
    };
    if tape.min_exercised_gap() < REGEN_GAP_TOL {
        return Ok(CheckOutcome::Retry);
    }
    let (gx, gy) = match layer.backward(&tape, &wx, &wy) {
        Ok(v) => v,
        Err(Error::DegenerateSpectrum { .. }) => return Ok(CheckOutcome::Retry),
        Err(e) => return Err(e),
    };
    let analytic = pack(&[&gx, &gy]);
    let mut theta = pack(&[&x, &y]);
    let shapes = [(s.m, s.d), (s.m, s.d)];
    let reg = s.reg;
    let k = s.k;
    compare(
        GradTarget::CcaLayer,
        &mut theta,
        &analytic,
        move |t| {
            let mats = unpack(t, &shapes);
            let mut l = CcaLayer::new(k, reg);
            let (xs, ys, _) = l.forward_train(&mats[0], &mats[1])?;
            Ok(xs.dot(&wx) + ys.dot(&wy))
        },
        s.h,
        s.tol,
    )
}

fn check_tno(s: &GradCheckSettings, seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_mat(&mut rng, s.m, s.d);
    let y = random_mat(&mut rng, s.m, s.d);
    check_probe_budget(2 * s.m * s.d)?;

    let (gx, gy) = match tno_gradient(&x, &y, s.reg) {
        Ok(v) => v,
        Err(Error::DegenerateSpectrum { .. }) => return Ok(CheckOutcome::Retry),
        Err(e) => return Err(e),
    };
    let analytic = pack(&[&gx, &gy]);
    let mut theta = pack(&[&x, &y]);
    let shapes = [(s.m, s.d), (s.m, s.d)];
    let reg = s.reg;
    compare(
        GradTarget::Tno,
        &mut theta,
        &analytic,
        move |t| {
            let mats = unpack(t, &shapes);
            tno_value(&mats[0], &mats[1], reg)
        },
        s.h,
        s.tol,
    )
}

fn check_ranking(s: &GradCheckSettings, seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = random_mat(&mut rng, s.m, s.k);
    let ys = random_mat(&mut rng, s.m, s.k);
    check_probe_budget(2 * s.m * s.k)?;
    let cfg = LossConfig::new(CHECK_MARGIN, false)?;
    if min_hinge_margin(&xs, &ys, &cfg)? < REGEN_HINGE_TOL {
        return Ok(CheckOutcome::Retry);
    }
    let (gx, gy) = ranking_loss_adjoint(&xs, &ys, &cfg)?;
    let analytic = pack(&[&gx, &gy]);
    let mut theta = pack(&[&xs, &ys]);
    let shapes = [(s.m, s.k), (s.m, s.k)];
    compare(
        GradTarget::Ranking,
        &mut theta,
        &analytic,
        move |t| {
            let mats = unpack(t, &shapes);
            ranking_loss(&mats[0], &mats[1], &cfg)
        },
        s.h,
        s.tol,
    )
}

fn check_mlp(s: &GradCheckSettings, seed: u64) -> Result<CheckOutcome> {
    let spec = TowerSpec::new(vec![s.d, 2 * s.d, s.k])?;
    let tower = Tower::init(&spec, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xda7a));
    let x = random_mat(&mut rng, s.m, s.d);
    let w = random_mat(&mut rng, s.m, s.k);
    check_probe_budget(tower.param_count() + s.m * s.d)?;

    let (_, tape) = mlp_forward(&tower, &x)?;
    let (grads, gx) = mlp_backward(&tower, &tape, &w)?;
    let mut analytic = tower_grads_flat(&grads);
    analytic.extend_from_slice(gx.data());
    let mut theta = tower_params(&tower);
    theta.extend_from_slice(x.data());

    let n_params = tower.param_count();
    let (m, d) = (s.m, s.d);
    compare(
        GradTarget::Mlp,
        &mut theta,
        &analytic,
        move |t| {
            let mut tw = tower.clone();
            set_tower_params(&mut tw, &t[..n_params]);
            let xin = Mat::from_raw(m, d, t[n_params..].to_vec());
            let (out, _) = mlp_forward(&tw, &xin)?;
            Ok(out.dot(&w))
        },
        s.h,
        s.tol,
    )
}

fn check_end_to_end(s: &GradCheckSettings, seed: u64) -> Result<CheckOutcome> {
    let spec = TowerSpec::new(vec![s.d, 2 * s.d, s.k])?;
    let tower_f = Tower::init(&spec, derive_seed(seed, 0xf));
    let tower_g = Tower::init(&spec, derive_seed(seed, 0x9));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xda7a));
    let x = random_mat(&mut rng, s.m, s.d);
    let y = random_mat(&mut rng, s.m, s.d);
    let n_params = tower_f.param_count() + tower_g.param_count();
    check_probe_budget(n_params)?;
    let cfg = LossConfig::new(CHECK_MARGIN, false)?;

    // Analytic chain: towers -> CCA layer -> ranking loss, reversed.
    let run = || -> Result<(Vec<f64>, f64, f64)> {
        let (xf, tape_f) = mlp_forward(&tower_f, &x)?;
        let (yg, tape_g) = mlp_forward(&tower_g, &y)?;
        let mut layer = CcaLayer::new(s.k, s.reg);
        let (xs, ys, tape) = layer.forward_train(&xf, &yg)?;
        let hinge_gap = min_hinge_margin(&xs, &ys, &cfg)?;
        let spectrum_gap = tape.min_exercised_gap();
        let (gxs, gys) = ranking_loss_adjoint(&xs, &ys, &cfg)?;
        let (gx, gy) = layer.backward(&tape, &gxs, &gys)?;
        let (grads_f, _) = mlp_backward(&tower_f, &tape_f, &gx)?;
        let (grads_g, _) = mlp_backward(&tower_g, &tape_g, &gy)?;
        let mut flat = tower_grads_flat(&grads_f);
        flat.extend(tower_grads_flat(&grads_g));
        Ok((flat, hinge_gap, spectrum_gap))
    };
    let (analytic, hinge_gap, spectrum_gap) = match run() {
        Ok(v) => v,
        Err(Error::DegenerateSpectrum { .. }) => return Ok(CheckOutcome::Retry),
        Err(e) => return Err(e),
    };
    if hinge_gap < REGEN_HINGE_TOL || spectrum_gap < REGEN_GAP_TOL {
        return Ok(CheckOutcome::Retry);
    }

    let mut theta = tower_params(&tower_f);
    theta.extend(tower_params(&tower_g));
    let nf = tower_f.param_count();
    let (k, reg) = (s.k, s.reg);
    compare(
        GradTarget::EndToEnd,
        &mut theta,
        &analytic,
        move |t| {
            let mut tf = tower_f.clone();
            let mut tg = tower_g.clone();
            set_tower_params(&mut tf, &t[..nf]);
            set_tower_params(&mut tg, &t[nf..]);
            let (xf, _) = mlp_forward(&tf, &x)?;
            let (yg, _) = mlp_forward(&tg, &y)?;
            let mut layer = CcaLayer::new(k, reg);
            let (xs, ys, _) = layer.forward_train(&xf, &yg)?;
            ranking_loss(&xs, &ys, &cfg)
        },
        s.h,
        s.tol,
    )
}

/// Verify one adjoint path against central finite differences.
///
/// Degenerate base points (eigenvalue gaps or hinge kinks too close for
/// finite differences) are regenerated from derived seeds up to five times.
pub fn grad_check(target: GradTarget, settings: &GradCheckSettings) -> Result<GradCheckReport> {
    if settings.m < settings.k + 1 || settings.k < 1 || settings.d < settings.k {
        return Err(Error::contract(format!(
            "gradient check needs m >= k+1 and d >= k >= 1, got m={}, d={}, k={}",
            settings.m, settings.d, settings.k
        )));
    }
    if !(settings.h > 0.0 && settings.tol > 0.0) {
        return Err(Error::contract("h and tol must be > 0"));
    }
    for attempt in 0..MAX_ATTEMPTS {
        let seed = derive_seed(settings.seed, 0xc0de + attempt as u64);
        let outcome = match target {
            GradTarget::CcaLayer => check_cca_layer(settings, seed)?,
            GradTarget::Tno => check_tno(settings, seed)?,
            GradTarget::Ranking => check_ranking(settings, seed)?,
            GradTarget::Mlp => check_mlp(settings, seed)?,
            GradTarget::EndToEnd => check_end_to_end(settings, seed)?,
        };
        match outcome {
            CheckOutcome::Done(report) => return Ok(report),
            CheckOutcome::Retry => continue,
        }
    }
    Err(Error::contract(format!(
        "gradient check '{target}' found no usable base point in {MAX_ATTEMPTS} attempts \
         (degenerate spectrum or hinge kink each time)"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mlp_with_zero_weights_matches_trivially() {
        // Both the analytic gradient and the finite difference of a
        // zero-weight linear path vanish w.r.t. the weights of upstream
        // layers; the check must still pass end to end.
        let settings = GradCheckSettings {
            m: 6,
            d: 3,
            k: 2,
            ..Default::default()
        };
        let report = grad_check(GradTarget::Mlp, &settings).unwrap();
        assert!(report.pass, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn ranking_small_case_passes() {
        let settings = GradCheckSettings {
            m: 8,
            d: 4,
            k: 3,
            ..Default::default()
        };
        let report = grad_check(GradTarget::Ranking, &settings).unwrap();
        assert!(report.pass, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn coarse_step_fails_tno() {
        let settings = GradCheckSettings {
            m: 16,
            d: 4,
            k: 2,
            h: 1e-1,
            ..Default::default()
        };
        let report = grad_check(GradTarget::Tno, &settings).unwrap();
        assert!(!report.pass, "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn probe_cap_is_enforced() {
        let settings = GradCheckSettings {
            m: 200,
            d: 40,
            k: 4,
            ..Default::default()
        };
        assert!(matches!(
            grad_check(GradTarget::Tno, &settings),
            Err(Error::Contract(_))
        ));
    }
}
