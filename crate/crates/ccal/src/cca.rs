//! Classic CCA on paired sample batches: regularized covariance estimation,
//! the whitened cross-covariance matrix `T`, optimal projections via two
//! symmetric eigendecompositions, the trace-norm objective (sum of canonical
//! correlations), and its gradient obtained by chaining the decomposition
//! adjoints from [`crate::mat`].
//!
//! Samples are rows everywhere: a batch is `X (m x d_x)` paired with
//! `Y (m x d_y)`, row `i` of both views describing the same entity.

use crate::error::{Error, Result};
use crate::mat::{
    cholesky_adjoint, cholesky_lower, eig_sym, eig_sym_adjoint, invert_lower,
    invert_lower_adjoint, EigSym, Mat, EPS_GAP,
};

/// Eigenvalues of `T T'` below this are treated as exactly zero correlation,
/// matching the clamp applied in the forward pass.
const EIG_FLOOR: f64 = 1e-12;

/// Round-off tolerance: eigenvalues of `T T'` more negative than this mean
/// the computation has broken down rather than merely rounded.
const NEG_EIG_TOL: f64 = -1e-10;

/// Fitted CCA statistics: per-view means, projection matrices, and the
/// canonical correlations they achieve on the fitting batch.
#[derive(Debug, Clone, PartialEq)]
pub struct CcaState {
    pub mean_x: Vec<f64>,
    pub mean_y: Vec<f64>,
    /// `d_x x k` projection for the first view.
    pub proj_x: Mat,
    /// `d_y x k` projection for the second view.
    pub proj_y: Mat,
    /// Canonical correlations, descending, clamped to `[0, 1]`.
    pub corr: Vec<f64>,
    /// Covariance regularization used at fit time.
    pub reg: f64,
    pub k: usize,
}

/// Regularized covariance estimates of a paired batch.
#[derive(Debug, Clone)]
pub struct Covariances {
    pub sxx: Mat,
    pub syy: Mat,
    pub sxy: Mat,
    pub mean_x: Vec<f64>,
    pub mean_y: Vec<f64>,
}

fn check_paired(x: &Mat, y: &Mat) -> Result<()> {
    if x.rows() != y.rows() {
        return Err(Error::contract(format!(
            "paired views must have equal row counts, got {} and {}",
            x.rows(),
            y.rows()
        )));
    }
    Ok(())
}

/// Estimate `S_xx = Xc' Xc / (m-1) + r I`, `S_yy` analogously, and
/// `S_xy = Xc' Yc / (m-1)` from a paired batch, along with the column means.
pub fn estimate_covariances(x: &Mat, y: &Mat, r: f64) -> Result<Covariances> {
    check_paired(x, y)?;
    if x.rows() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: x.rows(),
        });
    }
    if !(r >= 0.0 && r.is_finite()) {
        return Err(Error::contract(format!(
            "regularization must be finite and >= 0, got {r}"
        )));
    }
    let mean_x = x.col_means();
    let mean_y = y.col_means();
    let xc = x.sub_row_vec(&mean_x);
    let yc = y.sub_row_vec(&mean_y);
    let scale = 1.0 / (x.rows() as f64 - 1.0);
    let mut sxx = xc.tn_mul(&xc).scaled(scale);
    let mut syy = yc.tn_mul(&yc).scaled(scale);
    let sxy = xc.tn_mul(&yc).scaled(scale);
    sxx.add_scaled_identity(r);
    syy.add_scaled_identity(r);
    Ok(Covariances {
        sxx,
        syy,
        sxy,
        mean_x,
        mean_y,
    })
}

/// Whitened cross-covariance `T = C_xx^-1 S_xy (C_yy^-1)'` where `C_xx` is
/// the lower Cholesky factor of `S_xx`.
pub fn compute_t(sxx: &Mat, syy: &Mat, sxy: &Mat) -> Result<Mat> {
    if sxy.rows() != sxx.rows() || sxy.cols() != syy.rows() {
        return Err(Error::contract(format!(
            "compute_t: cross-covariance {}x{} does not match {}x{} and {}x{}",
            sxy.rows(),
            sxy.cols(),
            sxx.rows(),
            sxx.cols(),
            syy.rows(),
            syy.cols()
        )));
    }
    let jx = invert_lower(&cholesky_lower(sxx)?)?;
    let jy = invert_lower(&cholesky_lower(syy)?)?;
    Ok(jx.mul(sxy).nt_mul(&jy))
}

/// Every intermediate of the CCA solve, kept for the reverse pass.
#[derive(Debug, Clone)]
pub(crate) struct CcaForward {
    pub m: usize,
    pub k: usize,
    pub reg: f64,
    pub mean_x: Vec<f64>,
    pub mean_y: Vec<f64>,
    /// Centered inputs.
    pub xc: Mat,
    pub yc: Mat,
    pub sxy: Mat,
    /// Lower Cholesky factors of the regularized covariances.
    pub lx: Mat,
    pub ly: Mat,
    /// Their inverses.
    pub jx: Mat,
    pub jy: Mat,
    pub t: Mat,
    /// Eigendecomposition of `T T'`.
    pub eig_left: EigSym,
    /// Eigendecomposition of `T' T`.
    pub eig_right: EigSym,
    /// Per-component sign flips applied to the first projection.
    pub signs: Vec<f64>,
    /// Final projections (sign flip applied to `proj_x`).
    pub proj_x: Mat,
    pub proj_y: Mat,
    pub corr: Vec<f64>,
}

/// Run the full CCA solve on a paired batch, keeping all intermediates.
pub(crate) fn cca_forward(x: &Mat, y: &Mat, r: f64, k: usize) -> Result<CcaForward> {
    let (dx, dy) = (x.cols(), y.cols());
    if k < 1 || k > dx.min(dy) {
        return Err(Error::contract(format!(
            "k must be in [1, min(d_x, d_y)] = [1, {}], got {k}",
            dx.min(dy)
        )));
    }
    let cov = estimate_covariances(x, y, r)?;
    let xc = x.sub_row_vec(&cov.mean_x);
    let yc = y.sub_row_vec(&cov.mean_y);
    let lx = cholesky_lower(&cov.sxx)?;
    let ly = cholesky_lower(&cov.syy)?;
    let jx = invert_lower(&lx)?;
    let jy = invert_lower(&ly)?;
    let t = jx.mul(&cov.sxy).nt_mul(&jy);
    let eig_left = eig_sym(&t.nt_mul(&t))?;
    let eig_right = eig_sym(&t.tn_mul(&t))?;

    let corr = correlations_from_eigenvalues(&eig_left.values[..k])?;

    // Unit-variance projections: A0 = Jx' U_k, B0 = Jy' V_k.
    let u_k = eig_left.vectors.take_cols(k);
    let v_k = eig_right.vectors.take_cols(k);
    let a0 = jx.tn_mul(&u_k);
    let b0 = jy.tn_mul(&v_k);

    // Flip signs of the first projection so every component pair is
    // positively correlated, as required for cosine-distance retrieval.
    let diag = projection_cross_diag(&a0, &cov.sxy, &b0);
    let signs: Vec<f64> = diag.iter().map(|&c| if c < 0.0 { -1.0 } else { 1.0 }).collect();
    let mut proj_x = a0;
    for j in 0..k {
        if signs[j] < 0.0 {
            for i in 0..proj_x.rows() {
                let v = proj_x.get(i, j);
                proj_x.set(i, j, -v);
            }
        }
    }

    Ok(CcaForward {
        m: x.rows(),
        k,
        reg: r,
        mean_x: cov.mean_x,
        mean_y: cov.mean_y,
        xc,
        yc,
        sxy: cov.sxy,
        lx,
        ly,
        jx,
        jy,
        t,
        eig_left,
        eig_right,
        signs,
        proj_x,
        proj_y: b0,
        corr,
    })
}

/// `diag(A' S_xy B)` for `k`-column projections.
fn projection_cross_diag(a: &Mat, sxy: &Mat, b: &Mat) -> Vec<f64> {
    let k = a.cols();
    let sb = sxy.mul(b); // d_x x k
    let mut diag = vec![0.0; k];
    for j in 0..k {
        let mut acc = 0.0;
        for i in 0..a.rows() {
            acc += a.get(i, j) * sb.get(i, j);
        }
        diag[j] = acc;
    }
    diag
}

fn correlations_from_eigenvalues(e: &[f64]) -> Result<Vec<f64>> {
    let mut corr = Vec::with_capacity(e.len());
    for &v in e {
        if v < NEG_EIG_TOL {
            return Err(Error::contract(format!(
                "eigenvalue {v:.6e} of T T' is negative beyond round-off"
            )));
        }
        corr.push(v.max(0.0).sqrt().min(1.0));
    }
    Ok(corr)
}

impl CcaForward {
    pub fn into_state(self) -> CcaState {
        CcaState {
            mean_x: self.mean_x,
            mean_y: self.mean_y,
            proj_x: self.proj_x,
            proj_y: self.proj_y,
            corr: self.corr,
            reg: self.reg,
            k: self.k,
        }
    }
}

/// Fit CCA projections on a paired batch.
///
/// Projections satisfy `A' S_xx A = I_k` and `B' S_yy B = I_k` on the fitting
/// batch, `corr` holds the canonical correlations (square roots of the top
/// `k` eigenvalues of `T T'`), and the sign flip leaves
/// `diag(A' S_xy B) >= 0`.
pub fn cca_fit(x: &Mat, y: &Mat, r: f64, k: usize) -> Result<CcaState> {
    Ok(cca_forward(x, y, r, k)?.into_state())
}

impl CcaState {
    /// Project the first view: `(X - mean_x) A`.
    pub fn project_x(&self, x: &Mat) -> Result<Mat> {
        if x.cols() != self.proj_x.rows() {
            return Err(Error::contract(format!(
                "project_x: input has {} columns, state expects {}",
                x.cols(),
                self.proj_x.rows()
            )));
        }
        Ok(x.sub_row_vec(&self.mean_x).mul(&self.proj_x))
    }

    /// Project the second view: `(Y - mean_y) B`.
    pub fn project_y(&self, y: &Mat) -> Result<Mat> {
        if y.cols() != self.proj_y.rows() {
            return Err(Error::contract(format!(
                "project_y: input has {} columns, state expects {}",
                y.cols(),
                self.proj_y.rows()
            )));
        }
        Ok(y.sub_row_vec(&self.mean_y).mul(&self.proj_y))
    }
}

/// Project both views of a paired batch with fitted statistics.
pub fn project(state: &CcaState, x: &Mat, y: &Mat) -> Result<(Mat, Mat)> {
    check_paired(x, y)?;
    Ok((state.project_x(x)?, state.project_y(y)?))
}

/// Trace-norm objective: the sum of all `min(d_x, d_y)` canonical
/// correlations of the batch. Shares the code path with [`cca_fit`], so it
/// equals `cca_fit(..).corr.sum()` exactly.
pub fn tno_value(x: &Mat, y: &Mat, r: f64) -> Result<f64> {
    let k = x.cols().min(y.cols());
    let fwd = cca_forward(x, y, r, k)?;
    Ok(fwd.corr.iter().sum())
}

/// Gradient of [`tno_value`] with respect to both input batches, obtained by
/// reverse-mode chaining through the covariance, Cholesky, inversion, and
/// eigendecomposition steps.
pub fn tno_gradient(x: &Mat, y: &Mat, r: f64) -> Result<(Mat, Mat)> {
    let k = x.cols().min(y.cols());
    let fwd = cca_forward(x, y, r, k)?;

    // The objective sums the top-k sqrt-eigenvalues; refuse a gradient when
    // neighboring eigenvalues (including the selection boundary) are too
    // close to separate numerically.
    let e = &fwd.eig_left.values;
    let boundary = k.min(e.len() - 1);
    for i in 0..boundary {
        let gap = e[i] - e[i + 1];
        if gap.abs() < EPS_GAP {
            return Err(Error::DegenerateSpectrum {
                i,
                j: i + 1,
                gap: gap.abs(),
                threshold: EPS_GAP,
            });
        }
    }

    // d corr_i / d e_i = 1 / (2 sqrt(e_i)), zero where the forward clamps.
    let dx = x.cols();
    let mut ebar = vec![0.0; dx];
    for i in 0..k {
        if e[i] > EIG_FLOOR && e[i] < 1.0 {
            ebar[i] = 0.5 / e[i].sqrt();
        }
    }

    let seed = ChainSeed::from_eigenvalue_adjoints(&fwd, ebar);
    backprop_chain(&fwd, seed)
}

/// Adjoint seeds entering the shared reverse chain: contributions gathered
/// from whatever was computed downstream of the decompositions.
pub(crate) struct ChainSeed {
    /// Eigenvalue adjoints for the left eigensystem (`T T'`).
    pub ebar_left: Vec<f64>,
    /// Eigenvector adjoints for the left eigensystem, full `d_x x d_x`.
    pub ubar: Mat,
    /// Eigenvector adjoints for the right eigensystem (`T' T`), if any.
    pub vbar: Option<Mat>,
    /// Direct adjoint contributions to the inverse Cholesky factors.
    pub jx_adj: Mat,
    pub jy_adj: Mat,
    /// Direct adjoint contributions to the centered inputs.
    pub xc_adj: Mat,
    pub yc_adj: Mat,
}

impl ChainSeed {
    pub fn from_eigenvalue_adjoints(fwd: &CcaForward, ebar_left: Vec<f64>) -> ChainSeed {
        let (dx, dy) = (fwd.t.rows(), fwd.t.cols());
        ChainSeed {
            ebar_left,
            ubar: Mat::zeros(dx, dx),
            vbar: None,
            jx_adj: Mat::zeros(dx, dx),
            jy_adj: Mat::zeros(dy, dy),
            xc_adj: Mat::zeros(fwd.m, dx),
            yc_adj: Mat::zeros(fwd.m, dy),
        }
    }
}

/// Shared reverse chain from the eigensystem adjoints down to the raw batch
/// inputs, mirroring the forward steps of the CCA solve.
pub(crate) fn backprop_chain(fwd: &CcaForward, seed: ChainSeed) -> Result<(Mat, Mat)> {
    let m1_adj = eig_sym_adjoint(&fwd.eig_left, &seed.ebar_left, &seed.ubar)?;

    // T from M1 = T T' (and M2 = T' T when the right eigensystem was used).
    let mut t_adj = m1_adj.scaled(2.0).mul(&fwd.t);
    if let Some(vbar) = &seed.vbar {
        let zeros = vec![0.0; fwd.t.cols()];
        let m2_adj = eig_sym_adjoint(&fwd.eig_right, &zeros, vbar)?;
        t_adj.add_assign_scaled(&fwd.t.mul(&m2_adj.scaled(2.0)), 1.0);
    }

    // T = Jx S_xy Jy'.
    let mut jx_adj = seed.jx_adj;
    jx_adj.add_assign_scaled(&t_adj.mul(&fwd.jy).nt_mul(&fwd.sxy), 1.0);
    let mut jy_adj = seed.jy_adj;
    jy_adj.add_assign_scaled(&t_adj.tn_mul(&fwd.jx.mul(&fwd.sxy)), 1.0);
    let sxy_adj = fwd.jx.tn_mul(&t_adj).mul(&fwd.jy);

    // Inversion and Cholesky adjoints down to the covariance estimates.
    let lx_adj = invert_lower_adjoint(&fwd.jx, &jx_adj)?;
    let ly_adj = invert_lower_adjoint(&fwd.jy, &jy_adj)?;
    let sxx_adj = cholesky_adjoint(&fwd.lx, &lx_adj)?;
    let syy_adj = cholesky_adjoint(&fwd.ly, &ly_adj)?;

    // Covariances back to the centered inputs. The adjoints are symmetric,
    // so (S + S') collapses to 2S.
    let scale = 1.0 / (fwd.m as f64 - 1.0);
    let mut xc_adj = seed.xc_adj;
    xc_adj.add_assign_scaled(&fwd.xc.mul(&sxx_adj), 2.0 * scale);
    xc_adj.add_assign_scaled(&fwd.yc.nt_mul(&sxy_adj), scale);
    let mut yc_adj = seed.yc_adj;
    yc_adj.add_assign_scaled(&fwd.yc.mul(&syy_adj), 2.0 * scale);
    yc_adj.add_assign_scaled(&fwd.xc.mul(&sxy_adj), scale);

    // Centering is idempotent and self-adjoint.
    Ok((xc_adj.center_cols(), yc_adj.center_cols()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat::Mat;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn covariance_of_two_sample_batch() {
        let x = Mat::from_rows(&[&[0.0], &[2.0]]).unwrap();
        let cov = estimate_covariances(&x, &x, 0.0).unwrap();
        assert_close(cov.sxx.get(0, 0), 2.0, 1e-15);
        assert_close(cov.syy.get(0, 0), 2.0, 1e-15);
        assert_close(cov.sxy.get(0, 0), 2.0, 1e-15);
        assert_close(cov.mean_x[0], 1.0, 1e-15);
    }

    #[test]
    fn regularizer_is_additive_on_diagonal() {
        let x = Mat::from_rows(&[&[0.5, 1.0], &[2.0, -1.0], &[0.0, 3.0]]).unwrap();
        let y = Mat::from_rows(&[&[1.0], &[0.0], &[2.0]]).unwrap();
        let plain = estimate_covariances(&x, &y, 0.0).unwrap();
        let reg = estimate_covariances(&x, &y, 0.5).unwrap();
        for i in 0..2 {
            assert_close(reg.sxx.get(i, i), plain.sxx.get(i, i) + 0.5, 1e-15);
        }
        assert_eq!(reg.sxy.data(), plain.sxy.data());
    }

    #[test]
    fn constant_column_stays_positive_definite_with_reg() {
        let x = Mat::from_rows(&[&[1.0, 3.0], &[1.0, 4.0], &[1.0, 5.0]]).unwrap();
        let cov = estimate_covariances(&x, &x, 0.1).unwrap();
        assert!(cholesky_lower(&cov.sxx).is_ok());
    }

    #[test]
    fn too_few_samples() {
        let x = Mat::from_rows(&[&[1.0]]).unwrap();
        assert!(matches!(
            estimate_covariances(&x, &x, 0.0),
            Err(Error::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn identity_whitening_passes_cross_covariance_through() {
        let m = Mat::from_rows(&[&[0.3, -1.2], &[0.7, 0.4]]).unwrap();
        let t = compute_t(&Mat::identity(2), &Mat::identity(2), &m).unwrap();
        assert!(t.sub(&m).max_abs() <= 1e-14);
    }

    #[test]
    fn scalar_t_value() {
        let sxx = Mat::from_rows(&[&[4.0]]).unwrap();
        let syy = Mat::from_rows(&[&[9.0]]).unwrap();
        let sxy = Mat::from_rows(&[&[3.0]]).unwrap();
        let t = compute_t(&sxx, &syy, &sxy).unwrap();
        assert_close(t.get(0, 0), 0.5, 1e-14);
    }

    #[test]
    fn identical_views_have_unit_canonical_correlations() {
        // A fixed, well-conditioned 2-column batch.
        let x = Mat::from_rows(&[
            &[1.0, 0.3],
            &[-0.4, 2.0],
            &[0.9, -1.1],
            &[2.2, 0.6],
            &[-1.5, 0.2],
            &[0.1, -0.7],
        ])
        .unwrap();
        let state = cca_fit(&x, &x, 0.0, 2).unwrap();
        assert_close(state.corr[0], 1.0, 1e-8);
        assert_close(state.corr[1], 1.0, 1e-8);

        let t = {
            let cov = estimate_covariances(&x, &x, 0.0).unwrap();
            compute_t(&cov.sxx, &cov.syy, &cov.sxy).unwrap()
        };
        let tt = t.tn_mul(&t);
        let eig = eig_sym(&tt).unwrap();
        for v in eig.values {
            assert_close(v, 1.0, 1e-9);
        }
    }

    #[test]
    fn negated_view_flips_to_positive_correlation() {
        let x = Mat::from_rows(&[&[0.0], &[1.0], &[-2.0], &[0.5]]).unwrap();
        let y = x.scaled(-1.0);
        let state = cca_fit(&x, &y, 0.0, 1).unwrap();
        assert_close(state.corr[0], 1.0, 1e-10);
        let cov = estimate_covariances(&x, &y, 0.0).unwrap();
        let diag = projection_cross_diag(&state.proj_x, &cov.sxy, &state.proj_y);
        assert!(diag[0] > 0.0);
    }

    #[test]
    fn projection_of_mean_row_is_zero() {
        let x = Mat::from_rows(&[&[1.0, 2.0], &[3.0, 0.0], &[2.0, 4.0]]).unwrap();
        let state = cca_fit(&x, &x, 1e-3, 2).unwrap();
        let probe = Mat::from_vec(1, 2, state.mean_x.clone()).unwrap();
        let emb = state.project_x(&probe).unwrap();
        assert!(emb.max_abs() <= 1e-12);
    }

    #[test]
    fn k_too_large_is_a_contract_error() {
        let x = Mat::from_rows(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]).unwrap();
        assert!(matches!(
            cca_fit(&x, &x, 1e-3, 3),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn tno_of_identical_views_is_dimension() {
        let x = Mat::from_rows(&[
            &[1.0, 0.3, -0.2],
            &[-0.4, 2.0, 0.8],
            &[0.9, -1.1, 0.4],
            &[2.2, 0.6, -1.0],
            &[-1.5, 0.2, 0.9],
            &[0.1, -0.7, 1.3],
            &[0.6, 1.4, -0.5],
        ])
        .unwrap();
        let v = tno_value(&x, &x, 0.0).unwrap();
        assert_close(v, 3.0, 1e-7);
    }

    #[test]
    fn tno_equals_sum_of_fitted_correlations_exactly() {
        let x = Mat::from_rows(&[
            &[0.2, -1.0],
            &[1.4, 0.3],
            &[-0.8, 0.9],
            &[0.5, 1.7],
            &[-1.2, -0.4],
        ])
        .unwrap();
        let y = Mat::from_rows(&[
            &[1.1, 0.2],
            &[-0.3, 0.8],
            &[0.6, -1.4],
            &[0.9, 0.1],
            &[-0.2, 1.0],
        ])
        .unwrap();
        let v = tno_value(&x, &y, 1e-3).unwrap();
        let state = cca_fit(&x, &y, 1e-3, 2).unwrap();
        let sum: f64 = state.corr.iter().sum();
        assert_eq!(v, sum);
    }

    #[test]
    fn tno_gradient_of_identical_views_is_degenerate() {
        let x = Mat::from_rows(&[
            &[1.0, 0.3],
            &[-0.4, 2.0],
            &[0.9, -1.1],
            &[2.2, 0.6],
            &[-1.5, 0.2],
        ])
        .unwrap();
        assert!(matches!(
            tno_gradient(&x, &x, 0.0),
            Err(Error::DegenerateSpectrum { .. })
        ));
    }
}
