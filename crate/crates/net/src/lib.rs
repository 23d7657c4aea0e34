//! IntentNet: a point-cloud grounding network driven by intention text, with
//! its training objectives and a training/evaluation harness.

pub mod backbone;
pub mod config;
pub mod harness;
pub mod losses;
pub mod model;
pub mod nn;

pub use config::ModelConfig;
pub use model::{DecoderOutput, IntentNet, ModelInput};

#[derive(Debug, thiserror::Error)]
pub enum NetError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("input rejected: {0}")]
    Rejected(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Loss(#[from] losses::LossError),
    #[error(transparent)]
    Eval(#[from] ig_core::eval::EvalError),
    #[error(transparent)]
    Dataset(#[from] ig_core::dataset::DatasetError),
    #[error(transparent)]
    Tensor(#[from] candle_core::Error),
}
