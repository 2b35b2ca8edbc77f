//! Active multi-view recognition.
//!
//! A recurrent classifier consumes one view of an object at a time while a
//! learned policy decides which unseen view to request next. Training runs in
//! three stages: supervised recognition over random view orders, clipped
//! policy-gradient optimization of the selector against classifier
//! improvement rewards, and a final recognition refinement along the
//! trajectories the selector actually produces.
//!
//! Module map:
//! - [`numcore`]: tensors, reverse-mode autodiff, optimizers, schedules.
//! - [`nets`]: model parameters and forward passes (extractor, recurrent
//!   aggregators, classifier, actor, value head).
//! - [`env`]: multi-view samples, episode bookkeeping, the synthetic
//!   planted-view dataset, and manifest I/O.
//! - [`objectives`]: stage losses, rewards, advantages, the clipped
//!   surrogate objective.
//! - [`pipeline`]: configuration, the three-stage trainer, checkpoints.
//! - [`eval`]: step-indexed accuracy, aggregate metrics, dynamic exit,
//!   exhaustive upper bounds, per-view diagnostics.

pub mod env;
pub mod error;
pub mod eval;
pub mod nets;
pub mod numcore;
pub mod objectives;
pub mod pipeline;

pub use env::{Dataset, MultiViewSample};
pub use error::{Error, Result};
pub use nets::{ModelConfig, ModelParams};
pub use numcore::{Graph, Tensor, VarId};
