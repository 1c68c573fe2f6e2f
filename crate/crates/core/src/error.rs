use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at node {node} ({op}): {detail}")]
    Shape {
        node: usize,
        op: &'static str,
        detail: String,
    },
    #[error("leaf `{0}` is not bound")]
    UnboundLeaf(String),
    #[error("leaf `{0}` is not defined on this tape")]
    UnknownLeaf(String),
    #[error("leaf `{0}` is marked constant and cannot be differentiated")]
    ConstantLeaf(String),
    #[error("gradient requires a scalar output, tape output has shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid network configuration: {0}")]
    NetConfig(String),
    #[error("non-finite values in `{0}`")]
    NonFinite(String),
    #[error("discriminator score {0} is degenerate (must lie strictly inside (0, 1))")]
    DegenerateScore(f64),
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },
    #[error("calibration data is perfectly separable; set a nonzero l2 regularizer")]
    Separable,
    #[error("calibration: {0}")]
    Calibration(String),
    #[error("chain {chain} aborted at step {step}: {consecutive} consecutive non-finite proposals")]
    ChainDiverged {
        chain: usize,
        step: usize,
        consecutive: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("missing checkpoint {0}")]
    MissingCheckpoint(PathBuf),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
