//! Training loop, Monte-Carlo runner and result reporting.

mod experiment;
mod metrics;
mod optim;
mod plan;
mod report;
mod train;

pub use experiment::{config_slug, run_config, run_experiment, RunResult, TrialResult};
pub use metrics::{
    accuracy, confusion_matrix, correct_two_class, corrected_accuracy, mean_std,
    top_k_prediction_mass,
};
pub use optim::{Adam, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use plan::{
    parse_config_list, DatasetKind, DomainSpec, ExperimentPlan, DEFAULT_BATCH_SIZE, DEFAULT_EPOCHS,
    DEFAULT_EVAL_FRACTION, DEFAULT_LEARNING_RATE, DEFAULT_MC_TRIALS,
};
pub use report::{
    emit_results, parse_results_csv, percent_pm, write_outputs, Format, ResultRow, OPTIMIZER_NAME,
};
pub use train::{
    build_step_loss, evaluate, load_raw, predict_all, prepare_trial, sub_seed, train, train_bundle,
    EpochLog, Evaluation, RawData, TrainOptions, TrialData, TERM_NAMES,
};
