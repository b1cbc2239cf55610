//! Multi-stage networks with per-task heads, trained by momentum SGD.

mod arch;
mod layers;
mod model;
mod optim;
mod snapshot;

pub use arch::{ArchKind, ArchSpec};
pub use layers::{maxpool2, relu, Conv2d, Dense, Stage};
pub use model::{
    argmax, log_softmax, softmax_cross_entropy, stage_name, BatchGroup, GradScope, Grads, HeadUnit, Model,
    ParamOwner, Penalty, StageSlot, StageUnit, Targets,
};
pub use optim::{momentum_update, OptimizerConfig};
pub use snapshot::ParamSnapshot;
