//! Keypoint heatmap regression with a weight-shared cycled transformer.
//!
//! The model tokenizes an image into visual tokens, appends learnable keypoint
//! tokens, and runs the concatenated sequence through a transformer encoder
//! stack several times ("cycles"), feeding each cycle's output tokens back in
//! as the next cycle's input. Every cycle's keypoint tokens go through one
//! shared linear head to predict heatmaps. During training, later cycles act
//! as teachers for earlier ones via token-space MSE losses; at inference a
//! single pass is used, so deployment cost equals the plain one-pass model.
//!
//! Everything runs on a small deterministic reverse-mode autodiff engine over
//! dense CPU tensors (`autodiff`), with a procedural stick-figure dataset
//! (`data`), an Adam training loop (`train`), PCK evaluation (`eval`), an
//! ablation harness (`ablation`), and analysis exports (`analysis`).
//!
//! See the `examples/` directory for runnable entry points covering each
//! capability, or the `cyclepose` binary for the same via subcommands.

pub mod ablation;
pub mod analysis;
pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod distill;
pub mod eval;
pub mod model;
pub mod train;

pub use autodiff::{Graph, Real, TensorId};
pub use config::RunConfig;
pub use data::{DataConfig, HeatmapTarget, SyntheticSample};
pub use distill::{CycleTrace, LossBreakdown, LossPlan, Variant};
pub use eval::EvalReport;
pub use model::{Model, ModelConfig, TokenBatch};
pub use train::TrainConfig;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected {expected}, got shape {got:?}")]
    BadShape {
        op: &'static str,
        expected: String,
        got: Vec<usize>,
    },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("non-finite loss at step {step} (lr {lr:e}): {detail}")]
    NonFiniteLoss {
        step: usize,
        lr: f64,
        detail: String,
    },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("unknown {what} `{got}` (expected one of: {allowed})")]
    UnknownVariant {
        what: &'static str,
        got: String,
        allowed: &'static str,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Tool version embedded in output files.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
