//! The CCA projection layer: a network layer that, on every training batch,
//! analytically computes the optimal CCA projections for its two input views,
//! applies them, and supports backpropagating embedding adjoints through the
//! whole computation (covariances, Cholesky factors, their inverses, and the
//! two symmetric eigendecompositions).
//!
//! At evaluation time the layer reuses the statistics remembered from the
//! last training batch; [`CcaLayer::refit`] recomputes them on a larger batch
//! for more stable estimates before evaluation.
//!
//! A layer instance is single-writer: `forward_train` and `refit` mutate it
//! and must be serialized externally; `forward_eval` on a snapshot is safe to
//! call concurrently.

use crate::cca::{backprop_chain, cca_forward, CcaForward, CcaState, ChainSeed};
use crate::error::{Error, Result};
use crate::mat::Mat;

/// Reverse-mode bookkeeping for exactly one training forward pass.
///
/// A tape is invalidated by any later `forward_train` or `refit` on the same
/// layer; using it afterwards is a contract error.
#[derive(Debug)]
pub struct LayerTape {
    fwd: CcaForward,
    generation: u64,
}

impl LayerTape {
    /// Smallest eigenvalue gap the backward pass would divide by: the
    /// consecutive gaps touching the top `k` components of both
    /// eigensystems, including the selection boundary.
    pub fn min_exercised_gap(&self) -> f64 {
        let k = self.fwd.k;
        let per_side = |values: &[f64]| -> f64 {
            let boundary = (k + 1).min(values.len());
            values[..boundary]
                .windows(2)
                .map(|w| (w[0] - w[1]).abs())
                .fold(f64::INFINITY, f64::min)
        };
        per_side(&self.fwd.eig_left.values).min(per_side(&self.fwd.eig_right.values))
    }
}

/// Trainable CCA projection layer with `k` output components per view.
#[derive(Debug, Clone)]
pub struct CcaLayer {
    k: usize,
    reg: f64,
    state: Option<CcaState>,
    generation: u64,
}

impl CcaLayer {
    /// Fresh, unfitted layer. `k` is fixed for the layer's lifetime.
    pub fn new(k: usize, reg: f64) -> CcaLayer {
        CcaLayer {
            k,
            reg,
            state: None,
            generation: 0,
        }
    }

    /// Rebuild a layer around previously fitted statistics.
    pub fn from_state(state: CcaState) -> CcaLayer {
        CcaLayer {
            k: state.k,
            reg: state.reg,
            generation: 0,
            state: Some(state),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn reg(&self) -> f64 {
        self.reg
    }

    /// Change the covariance regularization used by subsequent forward
    /// passes (the trainer raises it temporarily to retry a batch whose
    /// spectrum was degenerate).
    pub fn set_reg(&mut self, reg: f64) {
        self.reg = reg;
    }

    pub fn state(&self) -> Option<&CcaState> {
        self.state.as_ref()
    }

    pub fn into_state(self) -> Option<CcaState> {
        self.state
    }

    pub fn is_fitted(&self) -> bool {
        self.state.is_some()
    }

    fn check_batch(&self, x: &Mat, y: &Mat) -> Result<()> {
        if x.rows() != y.rows() {
            return Err(Error::contract(format!(
                "paired views must have equal row counts, got {} and {}",
                x.rows(),
                y.rows()
            )));
        }
        if x.rows() < self.k + 1 {
            return Err(Error::InsufficientSamples {
                needed: self.k + 1,
                got: x.rows(),
            });
        }
        Ok(())
    }

    /// Training-mode forward pass: update the layer statistics from this
    /// batch, project both views with the freshly computed CCA projections,
    /// and return a tape for the reverse pass.
    pub fn forward_train(&mut self, x: &Mat, y: &Mat) -> Result<(Mat, Mat, LayerTape)> {
        self.check_batch(x, y)?;
        let fwd = cca_forward(x, y, self.reg, self.k)?;
        let xs = fwd.xc.mul(&fwd.proj_x);
        let ys = fwd.yc.mul(&fwd.proj_y);
        self.generation += 1;
        self.state = Some(fwd.clone().into_state());
        Ok((
            xs,
            ys,
            LayerTape {
                fwd,
                generation: self.generation,
            },
        ))
    }

    /// Evaluation-mode forward pass: project with the stored statistics,
    /// updating nothing. Accepts any batch size, including a single sample.
    pub fn forward_eval(&self, x: &Mat, y: &Mat) -> Result<(Mat, Mat)> {
        let state = self.state.as_ref().ok_or(Error::Unfitted)?;
        if x.rows() != y.rows() {
            return Err(Error::contract(format!(
                "paired views must have equal row counts, got {} and {}",
                x.rows(),
                y.rows()
            )));
        }
        Ok((state.project_x(x)?, state.project_y(y)?))
    }

    /// Pull adjoints of the projected outputs back to the layer inputs.
    ///
    /// For any scalar loss on the outputs, the returned matrices are its
    /// gradients with respect to the raw (uncentered) input batches.
    pub fn backward(&self, tape: &LayerTape, xs_adj: &Mat, ys_adj: &Mat) -> Result<(Mat, Mat)> {
        if tape.generation != self.generation {
            return Err(Error::StaleTape {
                tape: tape.generation,
                layer: self.generation,
            });
        }
        let fwd = &tape.fwd;
        let (m, k) = (fwd.m, fwd.k);
        if xs_adj.shape() != (m, k) || ys_adj.shape() != (m, k) {
            return Err(Error::contract(format!(
                "backward: output adjoints must be {m}x{k}, got {:?} and {:?}",
                xs_adj.shape(),
                ys_adj.shape()
            )));
        }

        // X* = Xc A and Y* = Yc B.
        let mut a_adj = fwd.xc.tn_mul(xs_adj);
        let b_adj = fwd.yc.tn_mul(ys_adj);
        let xc_adj = xs_adj.nt_mul(&fwd.proj_x);
        let yc_adj = ys_adj.nt_mul(&fwd.proj_y);

        // Undo the sign flip: A = A0 diag(signs), with signs piecewise
        // constant in the inputs.
        for j in 0..k {
            if fwd.signs[j] < 0.0 {
                for i in 0..a_adj.rows() {
                    let v = a_adj.get(i, j);
                    a_adj.set(i, j, -v);
                }
            }
        }

        // A0 = Jx' U_k and B0 = Jy' V_k.
        let dx = fwd.t.rows();
        let dy = fwd.t.cols();
        let u_k = fwd.eig_left.vectors.take_cols(k);
        let v_k = fwd.eig_right.vectors.take_cols(k);
        let jx_adj = u_k.nt_mul(&a_adj);
        let jy_adj = v_k.nt_mul(&b_adj);
        let uk_adj = fwd.jx.mul(&a_adj);
        let vk_adj = fwd.jy.mul(&b_adj);
        let mut ubar = Mat::zeros(dx, dx);
        for i in 0..dx {
            for j in 0..k {
                ubar.set(i, j, uk_adj.get(i, j));
            }
        }
        let mut vbar = Mat::zeros(dy, dy);
        for i in 0..dy {
            for j in 0..k {
                vbar.set(i, j, vk_adj.get(i, j));
            }
        }

        let seed = ChainSeed {
            ebar_left: vec![0.0; dx],
            ubar,
            vbar: Some(vbar),
            jx_adj,
            jy_adj,
            xc_adj,
            yc_adj,
        };
        backprop_chain(fwd, seed)
    }

    /// Recompute the layer statistics on a (typically larger) batch without
    /// producing outputs or a tape. Any outstanding tape becomes stale.
    pub fn refit(&mut self, x: &Mat, y: &Mat) -> Result<()> {
        self.check_batch(x, y)?;
        let fwd = cca_forward(x, y, self.reg, self.k)?;
        self.generation += 1;
        self.state = Some(fwd.into_state());
        Ok(())
    }
}
