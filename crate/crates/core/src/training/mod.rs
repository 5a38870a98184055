//! Loss, learning-rate schedule, augmentation, and the train/evaluate loops.

mod augment;
mod config;
mod eval;
mod loss;
mod schedule;
mod trainer;

pub use augment::{augment, AugmentConfig};
pub use config::TrainConfig;
pub use eval::{confusion, evaluate, predict_mask, stride_valid, SegPredictor};
pub use loss::{count_valid, loss_graph, total_loss, LossBreakdown, LossVars, DEFAULT_AUX_WEIGHT};
pub use schedule::{poly_lr, Sgd, DEFAULT_POLY_POWER};
pub use trainer::{load_pairs, train, LogRow, TrainLog, TrainOptions, TrainOutcome, TrainPair, CHECKPOINT_FILE, LOG_FILE};
