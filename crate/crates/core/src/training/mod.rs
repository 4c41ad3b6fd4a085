//! Training loop: sampling, composite losses, causal and balancing weights,
//! Adam with warmup/decay, time-marching windows and curricula.

pub mod loss;
pub mod optim;
pub mod sampling;
pub mod trainer;
pub mod weights;

pub use loss::{composite_loss, loss_terms, Batch, TermKind, Terms};
pub use optim::{Adam, LrSchedule};
pub use sampling::{sample_collocation, sample_stratified};
pub use weights::{causal_weights, grad_norm_weights, ntk_weights, Weighting};
pub use trainer::{
    eval_rel_l2, pi_init_data, sample_batch, train_window, EvalSet, EvalSource, IcSource, InitMode, MetricsRecord, Plan,
    Progress, TrainConfig, TrainState, WindowSetup,
};
