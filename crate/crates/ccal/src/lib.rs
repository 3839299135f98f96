//! Cross-modality embedding learning with a differentiable CCA projection
//! layer.
//!
//! The crate provides three ways to train a dual-view network for cosine
//! nearest-neighbor retrieval:
//!
//! * a trace-norm objective that maximizes the total canonical correlation
//!   of the tower outputs (deep CCA),
//! * a pairwise ranking loss on freely learned projections, and
//! * the combination of both: a CCA layer that analytically computes the
//!   optimal projections per batch and supports backpropagation through the
//!   whole computation, with the ranking loss on top.
//!
//! Supporting modules cover the dense linear algebra with reverse-mode
//! adjoint rules ([`mat`]), classic CCA ([`cca`]), the trainable layer
//! ([`layer`]), losses ([`loss`]), dual-tower networks and training
//! ([`net`]), retrieval evaluation ([`retrieval`]), paired datasets and
//! synthetic generators ([`data`]), and run configuration files
//! ([`config`]).

mod bytesfmt;
pub mod cca;
pub mod config;
pub mod data;
mod error;
pub mod layer;
pub mod loss;
pub mod mat;
pub mod net;
pub mod retrieval;

pub use error::{Error, Result};
