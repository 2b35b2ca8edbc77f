//! Run configuration: one flat key/value file drives a whole training run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::Dataset;
use crate::error::{Error, Result};
use crate::nets::ModelConfig;
use crate::objectives::PpoConfig;

/// Every knob of the three-stage trainer. All fields have defaults, so a
/// config file only lists what it overrides; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub hidden_dim: usize,
    /// Width of the tanh feature extractor; 0 feeds raw features through.
    pub mlp_width: usize,
    /// Temperature of the smoothing target in the first stage.
    pub temperature: f64,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub stage3_epochs: usize,
    pub stage1_lr: f64,
    pub stage1_lr_extractor: f64,
    pub stage2_lr: f64,
    /// Reserved extractor rate for the selection stage. Parsed and recorded,
    /// but not applied: the trainer keeps every recognition component frozen
    /// there, the extractor included.
    pub stage2_lr_extractor: f64,
    pub stage3_lr: f64,
    pub clip: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub gamma: f64,
    pub ppo_epochs: usize,
    pub ppo_minibatch: usize,
    /// Replace the learned selector with uniform random choice everywhere;
    /// skips the selection stage entirely.
    pub random_selection: bool,
    /// Let trajectories revisit views instead of masking seen ones out.
    pub allow_duplicates: bool,
    pub skip_stage3: bool,
    /// Drop the smoothing term from the first stage.
    pub disable_smoothing: bool,
    /// Merge the three stages into one joint optimization.
    pub end_to_end: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            batch_size: 32,
            hidden_dim: 64,
            mlp_width: 64,
            temperature: 2.0,
            stage1_epochs: 60,
            stage2_epochs: 15,
            stage3_epochs: 60,
            stage1_lr: 0.05,
            stage1_lr_extractor: 0.005,
            stage2_lr: 0.0005,
            stage2_lr_extractor: 0.00005,
            stage3_lr: 0.005,
            clip: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.01,
            gamma: 0.0,
            ppo_epochs: 4,
            ppo_minibatch: 32,
            random_selection: false,
            allow_duplicates: false,
            skip_stage3: false,
            disable_smoothing: false,
            end_to_end: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch_size must be positive".into()));
        }
        if self.hidden_dim == 0 {
            return Err(Error::Parameter("hidden_dim must be positive".into()));
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::Parameter(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        for (name, e) in [
            ("stage1_epochs", self.stage1_epochs),
            ("stage2_epochs", self.stage2_epochs),
            ("stage3_epochs", self.stage3_epochs),
        ] {
            if e == 0 {
                return Err(Error::Parameter(format!("{name} must be at least 1")));
            }
        }
        for (name, lr) in [
            ("stage1_lr", self.stage1_lr),
            ("stage1_lr_extractor", self.stage1_lr_extractor),
            ("stage2_lr", self.stage2_lr),
            ("stage2_lr_extractor", self.stage2_lr_extractor),
            ("stage3_lr", self.stage3_lr),
        ] {
            if !(lr > 0.0) || !lr.is_finite() {
                return Err(Error::Parameter(format!("{name} must be positive, got {lr}")));
            }
        }
        self.ppo().validate()
    }

    pub fn ppo(&self) -> PpoConfig {
        PpoConfig {
            clip: self.clip,
            value_coef: self.value_coef,
            entropy_coef: self.entropy_coef,
            gamma: self.gamma,
            update_epochs: self.ppo_epochs,
            minibatch: self.ppo_minibatch,
        }
    }

    /// Structural model config for a given dataset.
    pub fn model_config(&self, data: &Dataset) -> ModelConfig {
        ModelConfig {
            feature_dim: data.feature_dim,
            hidden_dim: self.hidden_dim,
            classes: data.classes,
            views: data.views,
            mlp_width: self.mlp_width,
        }
    }
}

pub fn load_train_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path)?;
    let cfg: TrainConfig =
        toml::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}
