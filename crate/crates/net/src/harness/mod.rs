//! Training, checkpointing, evaluation and ablation runs.

pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod detector;
pub mod objective;
pub mod train;

pub use ablation::{run_ablation, run_ablation_dir, AblationReport, AblationRow, ABLATION_ROWS};
pub use checkpoint::Checkpoint;
pub use config::{CandidateConfig, LossConfig, RunConfig, TrainConfig};
pub use data::{oracle_candidates, PreparedData, PreparedSample};
pub use detector::{predict_samples, ModelDetector};
pub use train::{train, train_prepared, EpochRecord, TrainOutcome};
