//! Flow-matching training: noise schedules, the loss, and the trainer.

mod flow;
mod optim;
mod schedule;
mod trainer;

pub use flow::{
    flow_matching_loss, flow_matching_loss_grad, interpolate, velocity_target, ChunkLossTerm,
};
pub use optim::{clip_grad_norm, cosine_lr, AdamW};
pub use schedule::{NoiseSchedule, ScheduleMode, WeightFn};
pub use trainer::{LossMode, StepRecord, TrainConfig, Trainer};
