//! Optimization, checkpointing and gradient verification.

pub mod checkpoint;
pub mod gradcheck;
pub mod optim;
pub mod trainer;

pub use gradcheck::{grad_check, grad_check_fn, GradCheckOptions, GradReport, NoParams, TensorCheck};
pub use optim::{adam_step, lr_schedule, param_grads, Adam, OptimState, TrainConfig};
pub use trainer::{read_loss_csv, train_loop, train_step, LossRecord};
