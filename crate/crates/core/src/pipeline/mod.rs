//! Training, soft-label caching and the full distillation experiment.

mod cache;
mod experiment;
mod results;
mod train;

pub use cache::{dump_soft_labels, teacher_fingerprint, CacheHeader, CacheRecord, SoftLabelCache};
pub use experiment::{
    resolve_fusion, run_experiment, training_cache, ExperimentConfig, ExperimentOutput,
    FusionConfig, ModelConfig, SoftLabelSource, BASELINE_TAG, STUDENT_TAG, TEACHER_TAG,
};
pub use results::{ResultRow, ResultsTable, SummaryRow, CSV_HEADER};
pub use train::{evaluate, evaluate_ensemble, train_model, train_student, TrainConfig, Trained};
