//! Training loops for the three regimes, with resumable checkpoints.

mod config;
mod loss;
mod optim;
mod trainer;

pub use config::{lr_schedule, OptimizerKind, Regime, TrainConfig, ADAM_BETAS, ADAM_EPS, RMSPROP_ALPHA, RMSPROP_EPS};
pub use loss::{critic_generator_loss, critic_loss, mse_loss, vanilla_discriminator_loss, vanilla_generator_loss};
pub use optim::Optimizer;
pub use trainer::{
    clip_parameters, clip_values, train_cae, train_vanilla_adversarial, train_wasserstein_adversarial, EpochRecord,
    NoObserver, TrainObserver, TrainedModel, Trainer,
};
