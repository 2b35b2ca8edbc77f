//! The training pipeline: configuration, stage trainers, trajectory
//! collection, and checkpointing. The default run is three stages in
//! sequence (supervised recognition, selection policy against the frozen
//! recognizer, recognition again over the learned trajectories); flags turn
//! individual stages off or collapse everything into one joint optimization.

mod checkpoint;
mod config;
mod rollout;
mod run;
mod train;

pub use checkpoint::{
    config_hash, load_checkpoint, restore_rng, rng_snapshot, save_checkpoint, Checkpoint,
};
pub use config::{load_train_config, TrainConfig};
pub use rollout::{
    actor_trajectory, collect_rollouts, random_trajectory, EpisodeRollout, FeatureCache,
};
pub use run::{run_pipeline, PipelineRun};
pub use train::{
    train_end_to_end, train_stage1, train_stage2, train_stage3, write_training_log, LogRow,
    ADAM_BETA1, ADAM_BETA2, SGD_MOMENTUM,
};
