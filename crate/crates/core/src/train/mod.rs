//! Patching, optimization, evaluation and the ablation matrix.

mod ablation;
mod adam;
mod evaluate;
mod patches;
mod trainer;

pub use ablation::{cell_config, run_ablation, AblationReport, AblationRow, AblationSpec};
pub use adam::Adam;
pub use evaluate::{
    evaluate, predict_half, psnr_linear, reconstruct_network, score_half, summarize, write_report, EvalReport,
    EvalRow, Method, SceneSummary, CONVENTION, DARK_FRACTION,
};
pub use patches::{extract_patches, patch_anchors, Patch};
pub use trainer::{load_patches, read_loss_log, train, train_on, LossRecord, TrainConfig, TrainOutcome, LOSS_LOG_HEADER};
