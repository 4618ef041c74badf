//! Training, augmentation, neighbour sampling, evaluation and experiment
//! presets.

mod augment;
mod eval;
mod experiment;
mod gradcheck;
mod sampling;
mod train;

pub use augment::{apply_augment, augment, sample_params, AugmentConfig, AugmentParams};
pub use eval::{
    average_precision, detect_pairs, evaluate_map, evaluate_map_with, evaluate_model, ClassReport, EvalConfig,
    EvalReport, Interpolation, PrPoint,
};
pub use sampling::{
    batch_stacks, eval_stack, neighbor_indices, reference_pairs, sample_training_stack, ReferencePolicy, StackSample,
};
pub use train::{build_model, fit_anchors, train, LrSchedule, StepLog, TrainConfig, TrainReport, METRICS_HEADER};
pub use experiment::{
    desk_train_config, run_experiment, run_variant, ExperimentConfig, ExperimentRow, ExperimentTable, Preset,
};
pub use gradcheck::model_gradcheck;
