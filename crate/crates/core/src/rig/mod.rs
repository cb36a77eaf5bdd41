//! Two-branch rationale training: warm-up, alternating redundancy
//! estimation and objective maximization, the ERM assistant that drives
//! contrastive sampling, baselines and evaluation.

mod contrast;
mod eval;
mod model;
mod schedule;
mod train;

pub use contrast::{contrastive_loss, kmeans, sample_contrast_sets, SampleInfo};
pub use eval::{
    causal_accuracy, evaluate, mask_precision_recall, pid_of_labels, pid_of_predictions, pid_row, predict, Metrics,
    PidRow, Predictions, EVAL_CHUNK,
};
pub use model::{argmax_rows, ModelCheckpoint, ModelConfig, ModelKind, ModelState, Need, Outputs};
pub use schedule::{Method, Phase, StepSwitches, TrainSchedule};
pub use train::{
    assistant_from_model, consistency_loss, erm_step, fit_assistant, maximize_step, model_config, redundancy_step, sharpness_penalty, similarity, size_penalty, train, warmup_step,
    Assistant, EpochRecord, History, SizeTerm, StepStats, TrainError, TrainOutcome, ERM_GROUPS, MAX_GROUPS, RED_GROUPS,
    WARMUP_GROUPS,
};
