//! Detector assembly: frozen recognizer, copied encoder, phoneme pooling,
//! graph attention and the multi-task objective.

mod loss;
mod model;
mod train;

pub use loss::{bce, clip_loss, total_loss, AUX_WEIGHT, BCE_EPS, COSINE_EPS};
pub use model::{
    BatchLoss, DetectorConfig, DetectorModel, DetectorPass, FrozenPass, Objective, Stage, DETECTOR_FORMAT,
};
pub use train::{score_clips, train, train_with_validator, EarlyStopping, EpochRecord, StopDecision, TrainOutcome, TrainingConfig};
