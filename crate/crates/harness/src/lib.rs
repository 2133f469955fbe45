//! Desk-scale harness around [`cycleacr_core`]: clip files and checkpoints,
//! training with an asynchronously updated memory bank, AP evaluation,
//! the ablation grid and the attention/similarity diagnostics.

pub mod ablation;
pub mod config;
pub mod data;
pub mod diagnostics;
pub mod eval;
pub mod io;
pub mod train;

use std::path::PathBuf;

pub use cycleacr_core as core;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] cycleacr_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("config error: {0}")]
    Config(String),
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },
    #[error("data error: {0}")]
    Data(String),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
