//! Numeric substrate: tensors, reverse-mode differentiation, optimizers.
//!
//! Everything runs in `f64` so gradient checks against central differences
//! are meaningful at tight tolerances.

mod gradcheck;
mod graph;
pub mod ops;
mod optim;
mod tensor;

pub use gradcheck::grad_check;
pub use graph::{Graph, VarId};
pub use ops::{
    cross_entropy_onehot, reset_tempered_eval_count, softmax, tempered_eval_count,
    tempered_softmax,
};
pub use optim::{cosine_lr, optim_step, OptimState, ADAM_EPS};
pub use tensor::Tensor;
