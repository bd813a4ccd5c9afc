//! Joint training, prediction by score product, configuration and
//! checkpoints.

mod checkpoint;
mod config;
mod model;
mod predict;
mod train;

pub use checkpoint::{Checkpoint, MAGIC, VERSION};
pub use config::{ConfigFile, DevMetric, ModelConfig};
pub use model::{joint_loss, l2_penalty, ForwardOutput, LossParts, Model};
pub use predict::{predict, predict_all, select_by_product, AnswerCandidate, Prediction, SCORE_FLOOR};
pub use train::{
    dev_score, init_model, resolve_metric, train, EpochRecord, StepRecord, TrainEvent, TrainOutcome, TrainReport,
};
