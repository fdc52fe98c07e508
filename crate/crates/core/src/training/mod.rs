//! Two-stage optimization: autoencoder pretraining, then the adversarial
//! loop; prior sampling, synthesis and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod history;
pub mod losses;
pub mod synth;
pub mod trainer;

pub use adam::{adam_step, AdamParams, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, OptimState, Session, Stage};
pub use config::TrainConfig;
pub use history::{StepRecord, TrainHistory};
pub use losses::{alpha_gan_losses, DiscOutputs, Losses, LOG_EPS};
pub use synth::{sample_prior, synthesize_dataset};
pub use trainer::{pretrain_autoencoder, reconstruction_mse, stage_steps, train_alpha_gan, CheckpointPlan};
