//! Dense double-precision matrices and the decomposition kernels the CCA
//! layer differentiates through: Cholesky factorization, lower-triangular
//! inversion, and a symmetric eigensolver, each paired with its reverse-mode
//! adjoint rule.
//!
//! Everything is row-major `f64`. All functions are pure; none of them keep
//! internal state, so values can be shared across threads freely.

use crate::error::{Error, Result};

/// Minimum eigenvalue gap for eigenvector adjoints. The adjoint rule divides
/// by eigenvalue differences; below this gap the gradient is numerically
/// meaningless and we refuse to produce one.
pub const EPS_GAP: f64 = 1e-8;

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    /// All-zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Mat {
        assert!(rows >= 1 && cols >= 1, "matrix dimensions must be >= 1");
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    /// Identity matrix.
    pub fn identity(n: usize) -> Mat {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Build from a row-major buffer. Rejects wrong lengths and non-finite
    /// entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Mat> {
        if rows == 0 || cols == 0 {
            return Err(Error::contract(format!(
                "matrix dimensions must be >= 1, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::contract(format!(
                "data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::contract(format!(
                "non-finite entry at flat index {pos}"
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    /// Build from row slices.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Mat> {
        if rows.is_empty() {
            return Err(Error::contract("matrix must have at least one row"));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::contract("ragged rows"));
        }
        let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Mat::from_vec(rows.len(), cols, data)
    }

    /// Unchecked constructor for internal results that are finite by
    /// construction.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Mat {
        debug_assert_eq!(data.len(), rows * cols);
        Mat { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    /// Row `i` as a slice.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    /// `self * other`. Panics on shape mismatch; public entry points validate
    /// dimensions before calling into matrix arithmetic.
    pub fn mul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (kk, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[kk * other.cols..(kk + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self' * other` without materializing the transpose.
    pub fn tn_mul(&self, other: &Mat) -> Mat {
        assert_eq!(self.rows, other.rows, "tn_mul shape mismatch");
        let mut out = Mat::zeros(self.cols, other.cols);
        for s in 0..self.rows {
            let a_row = self.row(s);
            let b_row = other.row(s);
            for (i, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self * other'` without materializing the transpose.
    pub fn nt_mul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.cols, "nt_mul shape mismatch");
        let mut out = Mat::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            for j in 0..other.rows {
                let b_row = other.row(j);
                let mut acc = 0.0;
                for (&a, &b) in a_row.iter().zip(b_row) {
                    acc += a * b;
                }
                out.data[i * other.rows + j] = acc;
            }
        }
        out
    }

    pub fn scaled(&self, s: f64) -> Mat {
        let data = self.data.iter().map(|v| v * s).collect();
        Mat::from_raw(self.rows, self.cols, data)
    }

    pub fn add(&self, other: &Mat) -> Mat {
        assert_eq!(self.shape(), other.shape(), "add shape mismatch");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Mat::from_raw(self.rows, self.cols, data)
    }

    pub fn sub(&self, other: &Mat) -> Mat {
        assert_eq!(self.shape(), other.shape(), "sub shape mismatch");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Mat::from_raw(self.rows, self.cols, data)
    }

    /// `self += s * other`.
    pub fn add_assign_scaled(&mut self, other: &Mat, s: f64) {
        assert_eq!(self.shape(), other.shape(), "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    /// `self += r * I`.
    pub fn add_scaled_identity(&mut self, r: f64) {
        assert!(self.is_square());
        for i in 0..self.rows {
            self.data[i * self.cols + i] += r;
        }
    }

    /// Symmetric part `(M + M') / 2`.
    pub fn sym(&self) -> Mat {
        assert!(self.is_square());
        let n = self.rows;
        let mut out = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                out.data[i * n + j] = 0.5 * (self.data[i * n + j] + self.data[j * n + i]);
            }
        }
        out
    }

    /// Zero out the strict upper triangle.
    pub fn tril(&self) -> Mat {
        assert!(self.is_square());
        let n = self.rows;
        let mut out = self.clone();
        for i in 0..n {
            for j in (i + 1)..n {
                out.data[i * n + j] = 0.0;
            }
        }
        out
    }

    /// Column means.
    pub fn col_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (m, &v) in means.iter_mut().zip(self.row(i)) {
                *m += v;
            }
        }
        let inv = 1.0 / self.rows as f64;
        for m in &mut means {
            *m *= inv;
        }
        means
    }

    /// Subtract a row vector from every row.
    pub fn sub_row_vec(&self, v: &[f64]) -> Mat {
        assert_eq!(v.len(), self.cols);
        let mut out = self.clone();
        for i in 0..self.rows {
            for (o, &s) in out.row_mut(i).iter_mut().zip(v) {
                *o -= s;
            }
        }
        out
    }

    /// Center every column (subtract column means); this is its own adjoint.
    pub fn center_cols(&self) -> Mat {
        self.sub_row_vec(&self.col_means())
    }

    /// Gather the given rows (in order) into a new matrix.
    pub fn gather_rows(&self, indices: &[usize]) -> Mat {
        assert!(!indices.is_empty());
        let mut out = Mat::zeros(indices.len(), self.cols);
        for (dst, &src) in indices.iter().enumerate() {
            out.row_mut(dst).copy_from_slice(self.row(src));
        }
        out
    }

    /// First `k` columns as a new matrix.
    pub fn take_cols(&self, k: usize) -> Mat {
        assert!(k >= 1 && k <= self.cols);
        let mut out = Mat::zeros(self.rows, k);
        for i in 0..self.rows {
            out.row_mut(i).copy_from_slice(&self.row(i)[..k]);
        }
        out
    }

    /// Frobenius inner product.
    pub fn dot(&self, other: &Mat) -> f64 {
        assert_eq!(self.shape(), other.shape(), "dot shape mismatch");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn frob_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn check_square(m: &Mat, what: &str) -> Result<()> {
    if !m.is_square() {
        return Err(Error::contract(format!(
            "{what} requires a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    Ok(())
}

fn check_symmetric(m: &Mat, tol: f64, what: &str) -> Result<()> {
    let n = m.rows();
    let scale = 1.0f64.max(m.max_abs());
    for i in 0..n {
        for j in (i + 1)..n {
            let asym = (m.get(i, j) - m.get(j, i)).abs();
            if asym > tol * scale {
                return Err(Error::contract(format!(
                    "{what} requires a symmetric matrix; entry ({i},{j}) differs from its mirror by {asym:.3e}"
                )));
            }
        }
    }
    Ok(())
}

/// Cholesky factorization `S = L * L'` with `L` lower triangular.
///
/// Fails with the 0-based index of the first non-positive pivot when `S` is
/// not positive definite.
pub fn cholesky_lower(s: &Mat) -> Result<Mat> {
    check_square(s, "cholesky_lower")?;
    check_symmetric(s, 1e-10, "cholesky_lower")?;
    let n = s.rows();
    let mut l = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut acc = s.get(i, j);
            for k in 0..j {
                acc -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if acc <= 0.0 {
                    return Err(Error::NotPositiveDefinite {
                        pivot: i,
                        value: acc,
                    });
                }
                l.set(i, j, acc.sqrt());
            } else {
                l.set(i, j, acc / l.get(j, j));
            }
        }
    }
    Ok(l)
}

/// Invert a lower-triangular matrix with strictly positive diagonal by
/// forward substitution. The result is lower triangular.
pub fn invert_lower(l: &Mat) -> Result<Mat> {
    check_square(l, "invert_lower")?;
    let n = l.rows();
    for i in 0..n {
        let d = l.get(i, i);
        if d <= 0.0 {
            return Err(Error::Singular { index: i, value: d });
        }
    }
    let mut inv = Mat::zeros(n, n);
    // Solve L * z_j = e_j column by column; z_j is zero above row j.
    for j in 0..n {
        inv.set(j, j, 1.0 / l.get(j, j));
        for i in (j + 1)..n {
            let mut acc = 0.0;
            for k in j..i {
                acc += l.get(i, k) * inv.get(k, j);
            }
            inv.set(i, j, -acc / l.get(i, i));
        }
    }
    Ok(inv)
}

/// Symmetric eigendecomposition, eigenvalues sorted descending.
#[derive(Debug, Clone)]
pub struct EigSym {
    /// Eigenvalues, descending.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors in the columns, matching `values`. Each
    /// column is sign-fixed: its entry of largest magnitude is positive
    /// (lowest index wins ties).
    pub vectors: Mat,
}

/// Symmetric eigendecomposition by cyclic Jacobi sweeps.
///
/// The input is symmetrized as `(S + S') / 2` first; asymmetry beyond 1e-9
/// (relative to the largest entry) is a contract error. Converges when the
/// off-diagonal Frobenius mass drops below `1e-12 * ||S||_F`, capped at 100
/// sweeps.
pub fn eig_sym(s: &Mat) -> Result<EigSym> {
    check_square(s, "eig_sym")?;
    check_symmetric(s, 1e-9, "eig_sym")?;
    let n = s.rows();
    let mut a = s.sym();
    let mut v = Mat::identity(n);
    let tol = JACOBI_TOL * a.frob_norm();

    let mut converged = false;
    let mut residual = off_diagonal_norm(&a);
    for _ in 0..JACOBI_MAX_SWEEPS {
        if residual <= tol {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.abs() > 1e20 {
                    0.5 / theta
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                // Rotate rows/columns p and q of A.
                a.set(p, p, app - t * apq);
                a.set(q, q, aqq + t * apq);
                a.set(p, q, 0.0);
                a.set(q, p, 0.0);
                for i in 0..n {
                    if i == p || i == q {
                        continue;
                    }
                    let aip = a.get(i, p);
                    let aiq = a.get(i, q);
                    let new_p = c * aip - sn * aiq;
                    let new_q = sn * aip + c * aiq;
                    a.set(i, p, new_p);
                    a.set(p, i, new_p);
                    a.set(i, q, new_q);
                    a.set(q, i, new_q);
                }
                // Accumulate the rotation into the eigenvector matrix.
                for i in 0..n {
                    let vip = v.get(i, p);
                    let viq = v.get(i, q);
                    v.set(i, p, c * vip - sn * viq);
                    v.set(i, q, sn * vip + c * viq);
                }
            }
        }
        residual = off_diagonal_norm(&a);
    }
    if !converged && residual > tol {
        return Err(Error::NoConvergence {
            sweeps: JACOBI_MAX_SWEEPS,
            residual,
        });
    }

    // Sort descending; stable, so equal eigenvalues keep Jacobi order.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a.get(j, j)
            .partial_cmp(&a.get(i, i))
            .expect("eigenvalues are finite")
    });
    let values: Vec<f64> = order.iter().map(|&i| a.get(i, i)).collect();
    let mut vectors = Mat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for i in 0..n {
            vectors.set(i, dst, v.get(i, src));
        }
    }
    fix_column_signs(&mut vectors);
    Ok(EigSym { values, vectors })
}

fn off_diagonal_norm(a: &Mat) -> f64 {
    let n = a.rows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            acc += 2.0 * a.get(i, j) * a.get(i, j);
        }
    }
    acc.sqrt()
}

/// Make each column's largest-magnitude entry positive (lowest index wins
/// ties) so eigendecompositions are reproducible across runs.
fn fix_column_signs(u: &mut Mat) {
    let (n, cols) = u.shape();
    for j in 0..cols {
        let mut best = 0usize;
        let mut best_abs = u.get(0, j).abs();
        for i in 1..n {
            let a = u.get(i, j).abs();
            if a > best_abs {
                best_abs = a;
                best = i;
            }
        }
        if u.get(best, j) < 0.0 {
            for i in 0..n {
                let v = u.get(i, j);
                u.set(i, j, -v);
            }
        }
    }
}

/// Reverse-mode rule for `eig_sym`: pull eigenvalue adjoints `value_adj` and
/// eigenvector adjoints `vector_adj` back to the symmetric input.
///
/// Uses the classical first-order perturbation form for symmetric
/// eigensystems (Magnus 1985): with `W = U' Ubar`,
///
/// ```text
/// Sbar = sym( U (diag(ebar) + F o W) U' ),   F_ij = 1 / (e_j - e_i), F_ii = 0
/// ```
///
/// Any pair of eigenvalues closer than [`EPS_GAP`] whose coupling `W_ij` is
/// nonzero makes the gradient meaningless and is reported as an error.
pub fn eig_sym_adjoint(decomp: &EigSym, value_adj: &[f64], vector_adj: &Mat) -> Result<Mat> {
    let n = decomp.values.len();
    if value_adj.len() != n || vector_adj.shape() != (n, n) {
        return Err(Error::contract(format!(
            "eig_sym_adjoint: adjoint shapes must be {n} and {n}x{n}"
        )));
    }
    let u = &decomp.vectors;
    let e = &decomp.values;
    let w = u.tn_mul(vector_adj);
    let mut k = Mat::zeros(n, n);
    for i in 0..n {
        k.set(i, i, value_adj[i]);
        for j in 0..n {
            if i == j {
                continue;
            }
            let wij = w.get(i, j);
            if wij == 0.0 {
                continue;
            }
            let gap = e[j] - e[i];
            if gap.abs() < EPS_GAP {
                return Err(Error::DegenerateSpectrum {
                    i: i.min(j),
                    j: i.max(j),
                    gap: gap.abs(),
                    threshold: EPS_GAP,
                });
            }
            k.set(i, j, wij / gap);
        }
    }
    Ok(u.mul(&k).nt_mul(u).sym())
}

/// Reverse-mode rule for `invert_lower`: given `C = L^-1` and the adjoint of
/// `C`, return the adjoint of `L`, which lives on the lower triangle:
///
/// ```text
/// Lbar = tril( -C' Cbar C' )
/// ```
pub fn invert_lower_adjoint(l_inv: &Mat, inv_adj: &Mat) -> Result<Mat> {
    check_square(l_inv, "invert_lower_adjoint")?;
    if l_inv.shape() != inv_adj.shape() {
        return Err(Error::contract(format!(
            "invert_lower_adjoint: shapes {:?} and {:?} must agree",
            l_inv.shape(),
            inv_adj.shape()
        )));
    }
    let lt = l_inv.transpose();
    Ok(lt.mul(inv_adj).mul(&lt).scaled(-1.0).tril())
}

/// Reverse-mode rule for `cholesky_lower`: given `L` and its adjoint, return
/// the adjoint of the symmetric input:
///
/// ```text
/// Sbar = sym( L^-T Phi(L' Lbar) L^-1 )
/// ```
///
/// where `Phi` keeps the lower triangle and halves the diagonal.
pub fn cholesky_adjoint(l: &Mat, l_adj: &Mat) -> Result<Mat> {
    check_square(l, "cholesky_adjoint")?;
    if l.shape() != l_adj.shape() {
        return Err(Error::contract(format!(
            "cholesky_adjoint: shapes {:?} and {:?} must agree",
            l.shape(),
            l_adj.shape()
        )));
    }
    let n = l.rows();
    let l_inv = invert_lower(l)?;
    let mut phi = l.tn_mul(l_adj).tril();
    for i in 0..n {
        let v = phi.get(i, i);
        phi.set(i, i, 0.5 * v);
    }
    let l_inv_t = l_inv.transpose();
    Ok(l_inv_t.mul(&phi).mul(&l_inv).sym())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn cholesky_identity() {
        let l = cholesky_lower(&Mat::identity(3)).unwrap();
        assert_eq!(l, Mat::identity(3));
    }

    #[test]
    fn cholesky_two_by_two() {
        let s = Mat::from_rows(&[&[4.0, 2.0], &[2.0, 5.0]]).unwrap();
        let l = cholesky_lower(&s).unwrap();
        let expected = Mat::from_rows(&[&[2.0, 0.0], &[1.0, 2.0]]).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_close(l.get(i, j), expected.get(i, j), 1e-12);
            }
        }
        // Reconstruction within relative Frobenius tolerance.
        let rec = l.nt_mul(&l);
        assert!(rec.sub(&s).frob_norm() <= 1e-10 * s.frob_norm());
    }

    #[test]
    fn cholesky_indefinite_reports_pivot() {
        let s = Mat::from_rows(&[&[1.0, 2.0], &[2.0, 1.0]]).unwrap();
        match cholesky_lower(&s) {
            Err(Error::NotPositiveDefinite { pivot, .. }) => assert_eq!(pivot, 1),
            other => panic!("expected decomposition failure, got {other:?}"),
        }
    }

    #[test]
    fn invert_lower_identity() {
        let inv = invert_lower(&Mat::identity(4)).unwrap();
        assert_eq!(inv, Mat::identity(4));
    }

    #[test]
    fn invert_lower_two_by_two() {
        let l = Mat::from_rows(&[&[2.0, 0.0], &[1.0, 2.0]]).unwrap();
        let inv = invert_lower(&l).unwrap();
        let expected = Mat::from_rows(&[&[0.5, 0.0], &[-0.25, 0.5]]).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_close(inv.get(i, j), expected.get(i, j), 1e-12);
            }
        }
        let prod = l.mul(&inv);
        assert!(prod.sub(&Mat::identity(2)).max_abs() <= 1e-10);
    }

    #[test]
    fn invert_lower_zero_diagonal_is_singular() {
        let mut l = Mat::identity(3);
        l.set(1, 1, 0.0);
        match invert_lower(&l) {
            Err(Error::Singular { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected singular error, got {other:?}"),
        }
    }

    #[test]
    fn eig_diagonal() {
        let s = Mat::from_rows(&[&[3.0, 0.0], &[0.0, 1.0]]).unwrap();
        let eig = eig_sym(&s).unwrap();
        assert_close(eig.values[0], 3.0, 1e-12);
        assert_close(eig.values[1], 1.0, 1e-12);
        assert!(eig.vectors.sub(&Mat::identity(2)).max_abs() <= 1e-12);
    }

    #[test]
    fn eig_off_diagonal_with_sign_convention() {
        let s = Mat::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap();
        let eig = eig_sym(&s).unwrap();
        let r = 0.5f64.sqrt();
        assert_close(eig.values[0], 1.0, 1e-12);
        assert_close(eig.values[1], -1.0, 1e-12);
        // Largest-magnitude entry positive; ties resolved to the lowest index.
        assert_close(eig.vectors.get(0, 0), r, 1e-12);
        assert_close(eig.vectors.get(1, 0), r, 1e-12);
        assert_close(eig.vectors.get(0, 1), r, 1e-12);
        assert_close(eig.vectors.get(1, 1), -r, 1e-12);
        // S u = e u for both pairs.
        for j in 0..2 {
            for i in 0..2 {
                let su: f64 = (0..2).map(|k| s.get(i, k) * eig.vectors.get(k, j)).sum();
                assert_close(su, eig.values[j] * eig.vectors.get(i, j), 1e-12);
            }
        }
    }

    #[test]
    fn eig_repeated_spectrum_reconstructs() {
        let eig = eig_sym(&Mat::identity(5)).unwrap();
        for v in &eig.values {
            assert_close(*v, 1.0, 1e-12);
        }
        let utu = eig.vectors.tn_mul(&eig.vectors);
        assert!(utu.sub(&Mat::identity(5)).max_abs() <= 1e-10);
    }

    #[test]
    fn eig_value_adjoint_is_outer_product() {
        let s = Mat::from_rows(&[&[3.0, 0.0], &[0.0, 1.0]]).unwrap();
        let eig = eig_sym(&s).unwrap();
        let sbar = eig_sym_adjoint(&eig, &[1.0, 0.0], &Mat::zeros(2, 2)).unwrap();
        let expected = Mat::from_rows(&[&[1.0, 0.0], &[0.0, 0.0]]).unwrap();
        assert!(sbar.sub(&expected).max_abs() <= 1e-12);
    }

    #[test]
    fn zero_adjoints_propagate_zero() {
        let s = Mat::from_rows(&[&[2.0, 0.3], &[0.3, 1.0]]).unwrap();
        let eig = eig_sym(&s).unwrap();
        let sbar = eig_sym_adjoint(&eig, &[0.0, 0.0], &Mat::zeros(2, 2)).unwrap();
        assert_eq!(sbar.max_abs(), 0.0);

        let l = cholesky_lower(&s).unwrap();
        let lbar = cholesky_adjoint(&l, &Mat::zeros(2, 2)).unwrap();
        assert_eq!(lbar.max_abs(), 0.0);

        let inv = invert_lower(&l).unwrap();
        let abar = invert_lower_adjoint(&inv, &Mat::zeros(2, 2)).unwrap();
        assert_eq!(abar.max_abs(), 0.0);
    }

    #[test]
    fn eig_adjoint_degenerate_pair_errors() {
        let eig = eig_sym(&Mat::identity(3)).unwrap();
        // Couple eigenvector 0 to eigenvector 1; their eigenvalues are equal.
        let mut ubar = Mat::zeros(3, 3);
        ubar.set(1, 0, 1.0);
        match eig_sym_adjoint(&eig, &[0.0; 3], &ubar) {
            Err(Error::DegenerateSpectrum { i, j, .. }) => assert!(i < j),
            other => panic!("expected degenerate spectrum, got {other:?}"),
        }
    }

    #[test]
    fn identity_inverse_adjoint_is_negated_lower_part() {
        let inv = Mat::identity(3);
        let mut adj = Mat::zeros(3, 3);
        for i in 0..3 {
            for j in 0..3 {
                adj.set(i, j, (i * 3 + j) as f64 + 1.0);
            }
        }
        let lbar = invert_lower_adjoint(&inv, &adj).unwrap();
        assert_eq!(lbar, adj.scaled(-1.0).tril());
    }

    #[test]
    fn cholesky_adjoint_scalar_case() {
        let s = Mat::from_rows(&[&[4.0]]).unwrap();
        let l = cholesky_lower(&s).unwrap();
        let lbar = Mat::from_rows(&[&[3.0]]).unwrap();
        let sbar = cholesky_adjoint(&l, &lbar).unwrap();
        // d sqrt(s) / d s = 1 / (2 sqrt(s)) = 0.25
        assert_close(sbar.get(0, 0), 0.25 * 3.0, 1e-14);
    }

    #[test]
    fn from_vec_rejects_non_finite() {
        assert!(Mat::from_vec(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Mat::from_vec(1, 2, vec![1.0, f64::INFINITY]).is_err());
        assert!(Mat::from_vec(2, 2, vec![1.0, 2.0, 3.0]).is_err());
    }
}
