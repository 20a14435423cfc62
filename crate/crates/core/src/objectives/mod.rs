//! Losses, alignment terms, optimizers and the training schedules.

mod align;
mod loss;
mod optim;
mod train;

pub use align::{alignment_gap, gradient_penalty, interpolates, penalty_at};
pub use loss::{accuracy, loss_eval, LossKind, LossSpec, LossValue};
pub use optim::{Optimizer, OptimizerKind};
pub use train::{
    adapt_pair, critic_step, train_schedule, train_schedule_with, AdaptationModel, Architecture, Control, EpochMetrics,
    PairContext, ScheduleKind, ScheduleOutcome, ScheduleState, Summarizer, TrainConfig,
};
