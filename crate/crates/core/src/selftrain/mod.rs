//! Desk-scale self-training with consistency regularization.

pub mod assign;
pub mod data;
pub mod model;
pub mod optim;
pub mod trainer;

pub use assign::{assign_argmax, assign_confidence_threshold};
pub use data::{augment, make_dataset, Dataset, DatasetKind, DatasetSpec};
pub use model::{evaluate, forward, forward_batch, loss_and_grad, ClassifierParams, LossParts};
pub use optim::{cosine_lr, ema_update, nesterov_step};
pub use trainer::{
    self_train, AllocationCheck, Assigner, CheckpointRecord, TrainConfig, TrainOutcome, Trainer,
};
