//! Forgetting mitigations: elastic weight consolidation, replay, headfirst
//! training and task-specific top stages.

mod ewc;
mod headfirst;
mod replay;
mod task_specific;

pub use ewc::{estimate_fisher_diag, ewc_penalty, EwcState, FisherLabels, ParamScope};
pub use headfirst::headfirst_train;
pub use replay::{replay_train_step, ReplayBuffer};
pub use task_specific::make_task_specific;
