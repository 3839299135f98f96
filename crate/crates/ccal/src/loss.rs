//! Embedding-space losses: cosine scoring, the pairwise ranking hinge loss
//! over in-batch contrastive samples, and a trace-norm loss wrapper. Each
//! loss comes with its adjoint with respect to the embeddings.

use crate::cca::{tno_gradient, tno_value};
use crate::error::{Error, Result};
use crate::mat::Mat;

/// Ranking-loss settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Hinge margin, > 0.
    pub margin: f64,
    /// Sum the hinge over both query directions instead of x-queries only.
    pub symmetric: bool,
}

impl LossConfig {
    pub fn new(margin: f64, symmetric: bool) -> Result<LossConfig> {
        if !(margin > 0.0 && margin.is_finite()) {
            return Err(Error::contract(format!(
                "margin must be finite and > 0, got {margin}"
            )));
        }
        Ok(LossConfig { margin, symmetric })
    }

    /// Number of query terms the raw sum ranges over; used to report a
    /// batch-size-independent loss value.
    pub fn query_count(&self, m: usize) -> usize {
        if self.symmetric {
            2 * m
        } else {
            m
        }
    }
}

/// Cosine of the angle between two vectors.
pub fn cosine_score(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::contract(format!(
            "cosine_score: lengths {} and {} differ",
            x.len(),
            y.len()
        )));
    }
    let nx = norm(x);
    let ny = norm(y);
    if nx == 0.0 {
        return Err(Error::UndefinedScore {
            view: "x".into(),
            row: 0,
        });
    }
    if ny == 0.0 {
        return Err(Error::UndefinedScore {
            view: "y".into(),
            row: 0,
        });
    }
    Ok(dot(x, y) / (nx * ny))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn row_norms(m: &Mat, view: &'static str) -> Result<Vec<f64>> {
    let mut norms = Vec::with_capacity(m.rows());
    for i in 0..m.rows() {
        let n = norm(m.row(i));
        if n == 0.0 {
            return Err(Error::UndefinedScore {
                view: view.into(),
                row: i,
            });
        }
        norms.push(n);
    }
    Ok(norms)
}

/// Pairwise ranking loss over a batch of paired embeddings:
///
/// ```text
/// L = sum_i sum_{j != i} max(0, margin - s(x_i, y_i) + s(x_i, y_j))
/// ```
///
/// with `s` the cosine score and, when `symmetric` is set, the mirrored sum
/// over y-queries added. Returns the raw sum; divide by
/// [`LossConfig::query_count`] for a batch-size-independent report.
pub fn ranking_loss(xs: &Mat, ys: &Mat, cfg: &LossConfig) -> Result<f64> {
    let (value, _) = ranking_internal(xs, ys, cfg, false)?;
    Ok(value)
}

/// Subgradient of [`ranking_loss`] with respect to both embedding matrices.
/// A hinge sitting exactly at zero contributes nothing.
pub fn ranking_loss_adjoint(xs: &Mat, ys: &Mat, cfg: &LossConfig) -> Result<(Mat, Mat)> {
    let (_, grads) = ranking_internal(xs, ys, cfg, true)?;
    Ok(grads.expect("adjoints requested"))
}

fn ranking_internal(
    xs: &Mat,
    ys: &Mat,
    cfg: &LossConfig,
    want_adjoints: bool,
) -> Result<(f64, Option<(Mat, Mat)>)> {
    if xs.shape() != ys.shape() {
        return Err(Error::contract(format!(
            "ranking_loss: embedding shapes {:?} and {:?} differ",
            xs.shape(),
            ys.shape()
        )));
    }
    let m = xs.rows();
    if m < 2 {
        return Err(Error::contract(
            "ranking_loss needs at least two pairs for contrastive terms",
        ));
    }
    let nx = row_norms(xs, "x")?;
    let ny = row_norms(ys, "y")?;

    // Full cosine score table s[i][j] = cos(x_i, y_j).
    let mut scores = Mat::zeros(m, m);
    for i in 0..m {
        for j in 0..m {
            scores.set(i, j, dot(xs.row(i), ys.row(j)) / (nx[i] * ny[j]));
        }
    }

    let mut value = 0.0;
    // Accumulated d L / d s[i][j].
    let mut s_adj = if want_adjoints {
        Some(Mat::zeros(m, m))
    } else {
        None
    };

    for i in 0..m {
        for j in 0..m {
            if j == i {
                continue;
            }
            // x_i as query against contrastive y_j.
            let h = cfg.margin - scores.get(i, i) + scores.get(i, j);
            if h > 0.0 {
                value += h;
                if let Some(sa) = s_adj.as_mut() {
                    let v = sa.get(i, i);
                    sa.set(i, i, v - 1.0);
                    let v = sa.get(i, j);
                    sa.set(i, j, v + 1.0);
                }
            }
            if cfg.symmetric {
                // y_i as query against contrastive x_j.
                let h = cfg.margin - scores.get(i, i) + scores.get(j, i);
                if h > 0.0 {
                    value += h;
                    if let Some(sa) = s_adj.as_mut() {
                        let v = sa.get(i, i);
                        sa.set(i, i, v - 1.0);
                        let v = sa.get(j, i);
                        sa.set(j, i, v + 1.0);
                    }
                }
            }
        }
    }

    let grads = if let Some(sa) = s_adj {
        // Chain through the cosine: with u = x_i / |x_i|, v = y_j / |y_j|,
        //   d s / d x_i = (v - s u) / |x_i|,  d s / d y_j = (u - s v) / |y_j|.
        let k = xs.cols();
        let mut gx = Mat::zeros(m, k);
        let mut gy = Mat::zeros(m, k);
        for i in 0..m {
            for j in 0..m {
                let w = sa.get(i, j);
                if w == 0.0 {
                    continue;
                }
                let s = scores.get(i, j);
                let xi = xs.row(i);
                let yj = ys.row(j);
                for c in 0..k {
                    let u = xi[c] / nx[i];
                    let v = yj[c] / ny[j];
                    gx.set(i, c, gx.get(i, c) + w * (v - s * u) / nx[i]);
                    gy.set(j, c, gy.get(j, c) + w * (u - s * v) / ny[j]);
                }
            }
        }
        Some((gx, gy))
    } else {
        None
    };

    Ok((value, grads))
}

/// Trace-norm loss on two raw tower output batches, returned negated so that
/// minimizing it maximizes the total canonical correlation. Also returns the
/// adjoints with respect to both inputs.
pub fn tno_loss(x: &Mat, y: &Mat, r: f64) -> Result<(f64, Mat, Mat)> {
    let value = -tno_value(x, y, r)?;
    let (gx, gy) = tno_gradient(x, y, r)?;
    Ok((value, gx.scaled(-1.0), gy.scaled(-1.0)))
}
