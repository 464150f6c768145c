//! Force regression models: magnetic-only GRU, image-only CNN, and their
//! concatenation fusion, with training, early stopping and metrics.

mod checkpoint;
mod metrics;
mod model;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader, TensorEntry, CHECKPOINT_VERSION};
pub use metrics::{metrics, metrics_csv_header, metrics_csv_row, Metrics};
pub use model::{
    audit, ArchAudit, CnnBranch, ForceModel, LayerAudit, MagNormalizer, Mode, ModelInput, NamedTensor, CBR,
    FC1_OUT, FEATURE_LEN, GRU_SPEC,
};
pub use train::{
    evaluate, predict, train, train_observed, write_history_csv, EarlyStopping, EpochRecord, StopDecision, TrainConfig,
    TrainOutcome, TrainingData,
};
