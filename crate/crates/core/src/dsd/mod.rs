//! Dense-sparse-dense training.

pub mod adam;
pub mod mask;
pub mod train;

pub use adam::{adam_step, adam_update, OptimizerState};
pub use mask::{apply_mask, compute_mask, Mask, RankingScope};
pub use train::{
    reports_csv, reports_text, run_dsd_pipeline, train_dense, train_dense_retrain, train_sparse,
    DsdOutcome, EpochReport, LrSchedule, Phase, PhaseOptions, PhaseReport, PhaseSnapshot,
    TrainConfig, ValidationSet,
};
