//! Differentially private SGD with precomputed, per-step or clipped
//! sensitivity control.

mod config;
mod data;
mod model;
mod train;

use thiserror::Error;

use crate::autodiff::AdError;
use crate::bounds::BoundsError;
use crate::compile::ExecError;
use crate::dp::DpError;
use crate::expr::ExprError;

pub use config::{ClipSection, LipschitzSection, PerStepSection, Sampling, TrainConfig, TrainMode, WeightBoxSection};
pub use data::{two_blobs, DataError, Dataset};
pub use model::{build_loss_graph, Activation, Init, LossKind, LossModel, ModelSpec};
pub use train::{precompute_kernels, sample_lot, train, Kernels, Record, StepRecord, Summary, TrainReport};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DpsgdError {
    #[error("invalid model: {0}")]
    Model(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("lot size {lot} exceeds dataset size {n}")]
    LotTooLarge { lot: usize, n: usize },
    #[error("sensitivity bound failed: {0}")]
    Bounds(#[from] BoundsError),
    #[error(transparent)]
    Dp(#[from] DpError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Ad(#[from] AdError),
}

impl DpsgdError {
    /// Whether the error concerns the dataset rather than the setup.
    pub fn is_data_error(&self) -> bool {
        matches!(self, DpsgdError::Data(_) | DpsgdError::LotTooLarge { .. })
    }
}
