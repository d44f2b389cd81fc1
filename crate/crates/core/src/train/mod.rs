//! Optimizers, the training loop and gradient statistics.

mod noise;
mod optimizer;
mod trainer;

pub use noise::{gradient_noise, gradient_variance, per_example_gradients};
pub use optimizer::{
    OptimizerState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON, MOMENTUM, RMSPROP_DECAY, RMSPROP_EPSILON,
};
pub(crate) use trainer::{argmax, BatchStream};
pub use trainer::{estimate_training_loss, evaluate, train_model, ModelRecord, Schedule, TrainingTrace};
