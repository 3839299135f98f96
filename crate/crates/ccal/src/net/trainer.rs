//! Minibatch training loop for the three head modes, with seeded shuffling,
//! Adam updates, validation-MRR model selection, and the
//! patience/learning-rate reduction schedule.

use super::adam::{adam_step, AdamParams, AdamState};
use super::mlp::{mlp_backward, mlp_forward, mlp_output, TowerGrads};
use super::{DualNet, HeadMode};
use crate::cca::cca_fit;
use crate::data::PairedDataset;
use crate::error::{Error, Result};
use crate::layer::CcaLayer;
use crate::loss::{ranking_loss, ranking_loss_adjoint, tno_loss, LossConfig};
use crate::mat::Mat;
use crate::retrieval::{mrr_percent, paired_ranks};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// After the first patience-triggered reduction, wait at most this many
/// epochs before the next one.
const REDUCED_PATIENCE: usize = 10;

/// Training hyperparameters. Defaults follow the optimization schedule used
/// throughout: divide the learning rate by 10 after `patience` stale epochs,
/// drop to a patience of 10, and stop after three reductions run out.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub lr_divisor: f64,
    pub reductions: usize,
    /// Ranking-loss margin.
    pub margin: f64,
    /// Sum the ranking hinge over both query directions.
    pub symmetric_loss: bool,
    /// Covariance regularization for CCA computations.
    pub reg: f64,
    /// Embedding width; must match the towers.
    pub k: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(k: usize) -> TrainConfig {
        TrainConfig {
            lr: 1e-3,
            batch_size: 1000,
            max_epochs: 200,
            patience: 50,
            lr_divisor: 10.0,
            reductions: 3,
            margin: 0.5,
            symmetric_loss: false,
            reg: 1e-3,
            k,
            weight_decay: 1e-4,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [("lr_divisor", self.lr_divisor), ("margin", self.margin)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::contract(format!(
                    "{name} must be finite and > 0, got {v}"
                )));
            }
        }
        // lr = 0 is allowed: it freezes the parameters, which is how the
        // schedule logic is exercised in isolation.
        for (name, v) in [
            ("lr", self.lr),
            ("reg", self.reg),
            ("weight_decay", self.weight_decay),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::contract(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        if self.lr_divisor <= 1.0 {
            return Err(Error::contract("lr_divisor must be > 1"));
        }
        if self.batch_size < 2 {
            return Err(Error::contract("batch_size must be >= 2"));
        }
        if self.max_epochs < 1 || self.patience < 1 || self.k < 1 {
            return Err(Error::contract(
                "max_epochs, patience, and k must all be >= 1",
            ));
        }
        Ok(())
    }
}

/// One epoch of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-batch loss (ranking losses reported per query term).
    pub loss: f64,
    /// Validation MRR in percent, averaged over both query directions.
    pub val_mrr: f64,
    /// Learning rate this epoch ran at.
    pub lr: f64,
    /// Noteworthy events: spectrum retries, skipped batches, LR reductions.
    pub events: Vec<String>,
}

impl EpochRecord {
    /// The streamed log line: `epoch loss val_mrr lr events`.
    pub fn format_line(&self) -> String {
        let events = if self.events.is_empty() {
            "-".to_string()
        } else {
            self.events.join(";")
        };
        format!(
            "{}\t{:.6}\t{:.4}\t{:.6e}\t{}",
            self.epoch, self.loss, self.val_mrr, self.lr, events
        )
    }
}

/// Per-epoch records plus which epoch won on validation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mrr: f64,
}

/// Flat tensor lengths in update order: tower f layers (weights, bias),
/// then tower g.
fn param_shapes(model: &DualNet) -> Vec<usize> {
    let mut shapes = Vec::new();
    for tower in [&model.tower_f, &model.tower_g] {
        for l in tower.layers() {
            shapes.push(l.weights.data().len());
            shapes.push(l.bias.len());
        }
    }
    shapes
}

fn apply_update(
    model: &mut DualNet,
    grads_f: &TowerGrads,
    grads_g: &TowerGrads,
    adam: &mut AdamState,
    weight_decay: f64,
) -> Result<()> {
    let mut params: Vec<&mut [f64]> = Vec::new();
    for tower in [&mut model.tower_f, &mut model.tower_g] {
        for l in tower.layers_mut() {
            params.push(l.weights.data_mut());
            params.push(l.bias.as_mut_slice());
        }
    }
    let mut grads: Vec<&[f64]> = Vec::new();
    for g in [grads_f, grads_g] {
        for (w, b) in g.weights.iter().zip(&g.biases) {
            grads.push(w.data());
            grads.push(b.as_slice());
        }
    }
    adam_step(adam, &mut params, &grads, weight_decay)
}

/// Outcome of one minibatch attempt.
enum StepOutcome {
    /// Reported loss plus parameter gradients.
    Ok(f64, TowerGrads, TowerGrads),
    Degenerate,
}

fn run_step(
    model: &DualNet,
    layer: &mut CcaLayer,
    xb: &Mat,
    yb: &Mat,
    loss_cfg: &LossConfig,
    reg: f64,
) -> Result<StepOutcome> {
    let (xf, tape_f) = mlp_forward(&model.tower_f, xb)?;
    let (yg, tape_g) = mlp_forward(&model.tower_g, yb)?;
    let queries = loss_cfg.query_count(xb.rows()) as f64;

    let (loss, gx, gy) = match model.head {
        HeadMode::Tno => match tno_loss(&xf, &yg, reg) {
            Ok((value, gx, gy)) => (value, gx, gy),
            Err(Error::DegenerateSpectrum { .. }) => return Ok(StepOutcome::Degenerate),
            Err(e) => return Err(e),
        },
        HeadMode::LearnedRank => {
            let value = ranking_loss(&xf, &yg, loss_cfg)?;
            let (gx, gy) = ranking_loss_adjoint(&xf, &yg, loss_cfg)?;
            (value / queries, gx, gy)
        }
        HeadMode::CcalRank => {
            let saved_reg = layer.reg();
            layer.set_reg(reg);
            let result = (|| -> Result<(f64, Mat, Mat)> {
                let (xs, ys, tape) = layer.forward_train(&xf, &yg)?;
                let value = ranking_loss(&xs, &ys, loss_cfg)?;
                let (gxs, gys) = ranking_loss_adjoint(&xs, &ys, loss_cfg)?;
                let (gx, gy) = layer.backward(&tape, &gxs, &gys)?;
                Ok((value / queries, gx, gy))
            })();
            layer.set_reg(saved_reg);
            match result {
                Ok(v) => v,
                Err(Error::DegenerateSpectrum { .. }) => return Ok(StepOutcome::Degenerate),
                Err(e) => return Err(e),
            }
        }
    };
    let (grads_f, _) = mlp_backward(&model.tower_f, &tape_f, &gx)?;
    let (grads_g, _) = mlp_backward(&model.tower_g, &tape_g, &gy)?;
    Ok(StepOutcome::Ok(loss, grads_f, grads_g))
}

fn validation_mrr(
    model: &DualNet,
    layer: &CcaLayer,
    last_batch: Option<&(Mat, Mat)>,
    val: &PairedDataset,
    cfg: &TrainConfig,
) -> Result<f64> {
    let xe_ye = match model.head {
        HeadMode::LearnedRank => {
            let xe = mlp_output(&model.tower_f, &val.x)?;
            let ye = mlp_output(&model.tower_g, &val.y)?;
            Some((xe, ye))
        }
        HeadMode::CcalRank => {
            if layer.is_fitted() {
                let xf = mlp_output(&model.tower_f, &val.x)?;
                let yg = mlp_output(&model.tower_g, &val.y)?;
                let (xe, ye) = layer.forward_eval(&xf, &yg)?;
                Some((xe, ye))
            } else {
                None
            }
        }
        HeadMode::Tno => {
            // Model selection for the trace-norm head: fit CCA projections
            // on the last training batch's tower outputs, then project.
            if let Some((xb, yb)) = last_batch {
                let xf = mlp_output(&model.tower_f, xb)?;
                let yg = mlp_output(&model.tower_g, yb)?;
                let state = cca_fit(&xf, &yg, cfg.reg, cfg.k)?;
                let xe = state.project_x(&mlp_output(&model.tower_f, &val.x)?)?;
                let ye = state.project_y(&mlp_output(&model.tower_g, &val.y)?)?;
                Some((xe, ye))
            } else {
                None
            }
        }
    };
    let Some((xe, ye)) = xe_ye else {
        return Ok(0.0);
    };
    let x2y = mrr_percent(&paired_ranks(&xe, &ye)?);
    let y2x = mrr_percent(&paired_ranks(&ye, &xe)?);
    Ok(0.5 * (x2y + y2x))
}

/// Train a model on `train`, selecting by mean validation MRR over both
/// retrieval directions. The model is left at the best-on-validation
/// parameters; `on_epoch` sees every epoch record as it is produced.
///
/// A minibatch whose spectrum is degenerate is retried once with ten times
/// the regularization and skipped (with a log event) if that fails too.
/// Non-finite gradients abort training.
pub fn train(
    model: &mut DualNet,
    train_ds: &PairedDataset,
    val_ds: &PairedDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainLog> {
    cfg.validate()?;
    if model.k() != cfg.k {
        return Err(Error::contract(format!(
            "config k = {} does not match tower embedding width {}",
            cfg.k,
            model.k()
        )));
    }
    if train_ds.dim_x() != model.tower_f.input_dim() || train_ds.dim_y() != model.tower_g.input_dim()
    {
        return Err(Error::contract(format!(
            "dataset dims ({}, {}) do not match tower inputs ({}, {})",
            train_ds.dim_x(),
            train_ds.dim_y(),
            model.tower_f.input_dim(),
            model.tower_g.input_dim()
        )));
    }
    if val_ds.dim_x() != train_ds.dim_x() || val_ds.dim_y() != train_ds.dim_y() {
        return Err(Error::contract("validation dims do not match training dims"));
    }
    let needs_covariance = model.head != HeadMode::LearnedRank;
    if needs_covariance && cfg.batch_size < cfg.k + 1 {
        return Err(Error::contract(format!(
            "batch_size must be >= k + 1 = {} for head '{}', got {}",
            cfg.k + 1,
            model.head,
            cfg.batch_size
        )));
    }
    if train_ds.len() < cfg.batch_size.min(cfg.k + 1) {
        return Err(Error::InsufficientSamples {
            needed: cfg.batch_size.min(cfg.k + 1),
            got: train_ds.len(),
        });
    }

    let loss_cfg = LossConfig::new(cfg.margin, cfg.symmetric_loss)?;
    let mut layer = match (&model.head, &model.cca) {
        (HeadMode::CcalRank, Some(state)) => CcaLayer::from_state(state.clone()),
        _ => CcaLayer::new(cfg.k, cfg.reg),
    };
    layer.set_reg(cfg.reg);

    let mut adam = AdamState::new(AdamParams::with_lr(cfg.lr), &param_shapes(model));
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(super::derive_seed(cfg.seed, 0x51));

    let mut log = TrainLog {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_mrr: f64::NEG_INFINITY,
    };
    let mut best_snapshot: Option<DualNet> = None;
    let mut stale_epochs = 0usize;
    let mut reductions_done = 0usize;
    let mut current_patience = cfg.patience;
    let mut lr = cfg.lr;
    let mut last_batch: Option<(Mat, Mat)> = None;

    let m = train_ds.len();
    for epoch in 1..=cfg.max_epochs {
        let mut indices: Vec<usize> = (0..m).collect();
        indices.shuffle(&mut shuffle_rng);

        let mut events: Vec<String> = Vec::new();
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in indices.chunks(cfg.batch_size).enumerate() {
            if chunk.len() < cfg.batch_size && needs_covariance {
                continue; // covariance heads drop the incomplete tail batch
            }
            if chunk.len() < 2 {
                continue; // no contrastive terms in a single-sample tail
            }
            let xb = train_ds.x.gather_rows(chunk);
            let yb = train_ds.y.gather_rows(chunk);

            let mut outcome = run_step(model, &mut layer, &xb, &yb, &loss_cfg, cfg.reg)?;
            if matches!(outcome, StepOutcome::Degenerate) {
                events.push(format!("retry(e{epoch}b{b})"));
                outcome = run_step(model, &mut layer, &xb, &yb, &loss_cfg, cfg.reg * 10.0)?;
            }
            match outcome {
                StepOutcome::Ok(loss, grads_f, grads_g) => {
                    apply_update(model, &grads_f, &grads_g, &mut adam, cfg.weight_decay)?;
                    loss_sum += loss;
                    batches += 1;
                    last_batch = Some((xb, yb));
                }
                StepOutcome::Degenerate => {
                    events.push(format!("skip(e{epoch}b{b})"));
                }
            }
        }
        let loss = if batches > 0 {
            loss_sum / batches as f64
        } else {
            f64::INFINITY
        };

        let val_mrr = validation_mrr(model, &layer, last_batch.as_ref(), val_ds, cfg)?;

        if val_mrr > log.best_val_mrr {
            log.best_val_mrr = val_mrr;
            log.best_epoch = epoch;
            stale_epochs = 0;
            let mut snapshot = model.clone();
            if model.head == HeadMode::CcalRank {
                snapshot.cca = layer.state().cloned();
            }
            best_snapshot = Some(snapshot);
        } else {
            stale_epochs += 1;
        }

        let mut stop = false;
        if stale_epochs >= current_patience {
            if reductions_done < cfg.reductions {
                lr /= cfg.lr_divisor;
                adam.set_lr(lr);
                reductions_done += 1;
                current_patience = cfg.patience.min(REDUCED_PATIENCE);
                stale_epochs = 0;
                events.push(format!("lr_reduced({lr:.3e})"));
            } else {
                stop = true;
            }
        }

        let record = EpochRecord {
            epoch,
            loss,
            val_mrr,
            lr: if events.iter().any(|e| e.starts_with("lr_reduced")) {
                lr * cfg.lr_divisor // the rate this epoch actually ran at
            } else {
                lr
            },
            events,
        };
        on_epoch(&record);
        log.epochs.push(record);
        if stop {
            break;
        }
    }

    if let Some(best) = best_snapshot {
        *model = best;
    }
    Ok(log)
}
