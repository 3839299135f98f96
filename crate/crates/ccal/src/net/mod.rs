//! Dual-tower MLPs, Adam optimization, the training loop for the three head
//! modes (trace-norm objective, freely learned ranking, CCA layer + ranking),
//! gradient checking, and the versioned model file format.

mod adam;
mod gradcheck;
mod mlp;
mod model_io;
mod trainer;

pub use adam::{adam_step, AdamParams, AdamState};
pub use gradcheck::{grad_check, GradCheckReport, GradCheckSettings, GradTarget};
pub use mlp::{mlp_backward, mlp_forward, mlp_output, DenseLayer, MlpTape, Tower, TowerGrads, TowerSpec};
pub use model_io::{model_from_bytes, model_to_bytes, load_model, save_model};
pub use trainer::{train, EpochRecord, TrainConfig, TrainLog};

use crate::cca::CcaState;
use crate::error::{Error, Result};
use crate::mat::Mat;
use std::fmt;

/// Which objective sits on top of the two towers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadMode {
    /// Maximize the trace norm of the whitened cross-covariance of the tower
    /// outputs (deep CCA training).
    Tno,
    /// Pairwise ranking loss directly on the tower outputs.
    LearnedRank,
    /// Pairwise ranking loss on the outputs of the CCA projection layer.
    CcalRank,
}

impl fmt::Display for HeadMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HeadMode::Tno => write!(f, "dcca"),
            HeadMode::LearnedRank => write!(f, "learned"),
            HeadMode::CcalRank => write!(f, "ccal"),
        }
    }
}

impl std::str::FromStr for HeadMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<HeadMode> {
        match s {
            "dcca" | "tno" => Ok(HeadMode::Tno),
            "learned" | "learned-rank" => Ok(HeadMode::LearnedRank),
            "ccal" | "ccal-rank" => Ok(HeadMode::CcalRank),
            other => Err(Error::contract(format!(
                "unknown model head '{other}' (expected dcca, learned, or ccal)"
            ))),
        }
    }
}

/// Two towers, a head mode, and (for heads that project) fitted CCA
/// statistics. Immutable snapshots are safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct DualNet {
    pub tower_f: Tower,
    pub tower_g: Tower,
    pub head: HeadMode,
    /// Present after training for `ccal`, after a refit for `dcca`, never
    /// for `learned`.
    pub cca: Option<CcaState>,
    /// Seed the parameters were initialized from.
    pub seed: u64,
    /// Echo of the flat training configuration, stored in the model file.
    pub config_echo: String,
}

impl DualNet {
    /// Build a fresh model with Glorot-initialized towers. Both towers must
    /// end in the same embedding width.
    pub fn new(spec_f: &TowerSpec, spec_g: &TowerSpec, head: HeadMode, seed: u64) -> Result<DualNet> {
        if spec_f.output() != spec_g.output() {
            return Err(Error::contract(format!(
                "towers must share the embedding width, got {} and {}",
                spec_f.output(),
                spec_g.output()
            )));
        }
        Ok(DualNet {
            tower_f: Tower::init(spec_f, derive_seed(seed, 0x0f)),
            tower_g: Tower::init(spec_g, derive_seed(seed, 0x10)),
            head,
            cca: None,
            seed,
            config_echo: String::new(),
        })
    }

    /// Embedding width of the retrieval space.
    pub fn k(&self) -> usize {
        self.tower_f.output_dim()
    }

    /// Embed a paired batch into the retrieval space: raw tower outputs for
    /// the learned head, CCA-projected outputs otherwise (which requires
    /// fitted statistics).
    pub fn embed(&self, x: &Mat, y: &Mat) -> Result<(Mat, Mat)> {
        let xf = mlp_output(&self.tower_f, x)?;
        let yg = mlp_output(&self.tower_g, y)?;
        match self.head {
            HeadMode::LearnedRank => Ok((xf, yg)),
            HeadMode::Tno | HeadMode::CcalRank => {
                let state = self.cca.as_ref().ok_or(Error::Unfitted)?;
                Ok((state.project_x(&xf)?, state.project_y(&yg)?))
            }
        }
    }

    /// Embed only the first modality (queries or candidates on the x side).
    pub fn embed_x(&self, x: &Mat) -> Result<Mat> {
        let xf = mlp_output(&self.tower_f, x)?;
        match self.head {
            HeadMode::LearnedRank => Ok(xf),
            _ => self.cca.as_ref().ok_or(Error::Unfitted)?.project_x(&xf),
        }
    }

    /// Embed only the second modality.
    pub fn embed_y(&self, y: &Mat) -> Result<Mat> {
        let yg = mlp_output(&self.tower_g, y)?;
        match self.head {
            HeadMode::LearnedRank => Ok(yg),
            _ => self.cca.as_ref().ok_or(Error::Unfitted)?.project_y(&yg),
        }
    }
}

/// Derive independent per-purpose RNG seeds from one base seed (splitmix64).
pub(crate) fn derive_seed(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
