//! First-order optimizers and the cosine learning-rate schedule.

use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Default epsilon inside Adam's denominator.
pub const ADAM_EPS: f64 = 1e-8;

/// Per-parameter optimizer state. One instance drives one ordered list of
/// parameter tensors; the slot layout is fixed at construction.
#[derive(Clone, Debug)]
pub enum OptimState {
    SgdMomentum {
        momentum: f64,
        step: u64,
        velocity: Vec<Tensor>,
    },
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
        step: u64,
        m: Vec<Tensor>,
        v: Vec<Tensor>,
    },
}

impl OptimState {
    pub fn sgd_momentum(params: &[Tensor], momentum: f64) -> Self {
        OptimState::SgdMomentum {
            momentum,
            step: 0,
            velocity: params.iter().map(Tensor::zeros_like).collect(),
        }
    }

    pub fn adam(params: &[Tensor], beta1: f64, beta2: f64) -> Self {
        OptimState::Adam {
            beta1,
            beta2,
            eps: ADAM_EPS,
            step: 0,
            m: params.iter().map(Tensor::zeros_like).collect(),
            v: params.iter().map(Tensor::zeros_like).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        match self {
            OptimState::SgdMomentum { step, .. } => *step,
            OptimState::Adam { step, .. } => *step,
        }
    }

    fn slots(&self) -> usize {
        match self {
            OptimState::SgdMomentum { velocity, .. } => velocity.len(),
            OptimState::Adam { m, .. } => m.len(),
        }
    }
}

/// Applies one in-place update. `params` and `grads` must match the state's
/// slot layout exactly; the update is deterministic, so identical sequences
/// of calls produce bit-identical parameters.
pub fn optim_step(
    state: &mut OptimState,
    params: &mut [Tensor],
    grads: &[Tensor],
    lr: f64,
) -> Result<()> {
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(Error::Parameter(format!("learning rate must be positive, got {lr}")));
    }
    if params.len() != grads.len() || params.len() != state.slots() {
        return Err(Error::Contract(format!(
            "optimizer slot mismatch: {} params, {} grads, {} slots",
            params.len(),
            grads.len(),
            state.slots()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::Contract(format!(
                "gradient shape {:?} does not match parameter shape {:?}",
                g.shape(),
                p.shape()
            )));
        }
    }

    match state {
        OptimState::SgdMomentum { momentum, step, velocity } => {
            *step += 1;
            for ((p, g), vel) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
                for ((pi, gi), vi) in
                    p.data_mut().iter_mut().zip(g.data()).zip(vel.data_mut())
                {
                    *vi = *momentum * *vi + gi;
                    *pi -= lr * *vi;
                }
            }
        }
        OptimState::Adam { beta1, beta2, eps, step, m, v } => {
            *step += 1;
            let t = *step as f64;
            let bias1 = 1.0 - beta1.powf(t);
            let bias2 = 1.0 - beta2.powf(t);
            for (((p, g), mi), vi) in
                params.iter_mut().zip(grads).zip(m.iter_mut()).zip(v.iter_mut())
            {
                for (((pi, gi), mij), vij) in p
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .zip(mi.data_mut())
                    .zip(vi.data_mut())
                {
                    *mij = *beta1 * *mij + (1.0 - *beta1) * gi;
                    *vij = *beta2 * *vij + (1.0 - *beta2) * gi * gi;
                    let m_hat = *mij / bias1;
                    let v_hat = *vij / bias2;
                    *pi -= lr * m_hat / (v_hat.sqrt() + *eps);
                }
            }
        }
    }
    Ok(())
}

/// Cosine annealing: `base_lr * (1 + cos(pi * epoch / total)) / 2`.
/// Decreases monotonically from `base_lr` at epoch 0 toward 0 at `total`.
pub fn cosine_lr(epoch: usize, total_epochs: usize, base_lr: f64) -> Result<f64> {
    if total_epochs == 0 {
        return Err(Error::Parameter("total_epochs must be at least 1".into()));
    }
    if epoch > total_epochs {
        return Err(Error::Parameter(format!(
            "epoch {epoch} past the end of a {total_epochs}-epoch schedule"
        )));
    }
    let t = epoch as f64 / total_epochs as f64;
    Ok(base_lr * (1.0 + (std::f64::consts::PI * t).cos()) / 2.0)
}
