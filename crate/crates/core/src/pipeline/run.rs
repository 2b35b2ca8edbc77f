//! Stage orchestration: trains a fresh model under one configuration,
//! snapshots a checkpoint after every completed stage, and scores the final
//! parameters on held-out data.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::Dataset;
use crate::error::Result;
use crate::eval::{evaluate, EvalReport, PolicyMode};
use crate::nets::ModelParams;
use crate::pipeline::checkpoint::{config_hash, save_checkpoint, Checkpoint};
use crate::pipeline::config::TrainConfig;
use crate::pipeline::train::{
    train_end_to_end, train_stage1, train_stage2, train_stage3, write_training_log, LogRow,
};

/// Everything a finished run produces: one snapshot per completed stage, the
/// epoch-level loss log, and the held-out score of the final model.
pub struct PipelineRun {
    /// Checkpoints in execution order. A staged run yields one per stage it
    /// ran (1, then 2 and 3 minus any skipped); a joint run yields a single
    /// snapshot labeled stage 0.
    pub checkpoints: Vec<Checkpoint>,
    pub log: Vec<LogRow>,
    pub report: EvalReport,
}

impl PipelineRun {
    /// The last snapshot taken; it holds the final parameters.
    pub fn final_checkpoint(&self) -> &Checkpoint {
        self.checkpoints.last().expect("a run always produces at least one checkpoint")
    }
}

/// Runs the configured training schedule on `train` and scores the result
/// on `test`, averaging the accuracy curve over `eval_seeds`.
///
/// Staged runs go stage 1, then 2, then 3. `random_selection` drops stage 2
/// entirely (stage 3 keeps drawing random trajectories and the policy heads
/// are never consulted), `skip_stage3` drops stage 3, and `end_to_end`
/// replaces the whole schedule with the joint trainer. The report scores the
/// greedy learned policy, or random selection when the run never trained
/// one.
///
/// When `run_dir` is given, each checkpoint is written there as
/// `stage{N}.ckpt` (N = 0 for a joint run) together with the loss log as
/// `training_log.csv`.
pub fn run_pipeline(
    cfg: &TrainConfig,
    train: &Dataset,
    test: &Dataset,
    eval_seeds: &[u64],
    run_dir: Option<&Path>,
) -> Result<PipelineRun> {
    cfg.validate()?;
    let hash = config_hash(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ModelParams::init(cfg.model_config(train), &mut rng)?;
    let mut log = Vec::new();
    let mut checkpoints: Vec<Checkpoint> = Vec::new();

    let snap = |params: &ModelParams, stage: u8, epoch: usize, rng: &ChaCha8Rng| {
        Checkpoint::new(params.clone(), stage, epoch, hash.clone(), rng)
    };

    if cfg.end_to_end {
        train_end_to_end(&mut params, train, cfg, &mut rng, &mut log)?;
        checkpoints.push(snap(&params, 0, cfg.stage1_epochs, &rng));
    } else {
        train_stage1(&mut params, train, cfg, &mut rng, &mut log)?;
        checkpoints.push(snap(&params, 1, cfg.stage1_epochs, &rng));
        if !cfg.random_selection {
            train_stage2(&mut params, train, cfg, &mut rng, &mut log)?;
            checkpoints.push(snap(&params, 2, cfg.stage2_epochs, &rng));
        }
        if !cfg.skip_stage3 {
            train_stage3(&mut params, train, cfg, &mut rng, &mut log)?;
            checkpoints.push(snap(&params, 3, cfg.stage3_epochs, &rng));
        }
    }

    let mode = if cfg.random_selection { PolicyMode::Random } else { PolicyMode::Active };
    let report = evaluate(&params, test, mode, eval_seeds)?;

    if let Some(dir) = run_dir {
        std::fs::create_dir_all(dir)?;
        for ck in &checkpoints {
            save_checkpoint(&dir.join(format!("stage{}.ckpt", ck.stage)), ck)?;
        }
        write_training_log(&dir.join("training_log.csv"), &log)?;
    }

    Ok(PipelineRun { checkpoints, log, report })
}
