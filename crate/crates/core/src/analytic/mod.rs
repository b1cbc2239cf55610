//! Frozen-feature model: features fixed after task 1, a linear head trained on
//! task 2, and the overlap kernel that governs how task-1 logits move.
//!
//! One head step changes task-1 logits by `Δf(x) = −η Σ_{x′} Θ(x, x′) ∂L/∂f(x′)`,
//! so `|Δf(x)| ≤ η ‖Θ(x)‖ ‖∂L/∂f‖`. Simulations record both sides of each.

mod dynamics;
mod features;
mod multihead;

pub use dynamics::{
    head_sgd_simulate, lemma_bound, weight_drift_report, DriftPoint, EvalPoints, FrozenHead, Trajectory,
    TrajectoryStep,
};
pub use features::{extract_features, overlap_kernel, rotate_features, FeatureMatrix, OverlapKernel};
pub use multihead::{multihead_simulate, MultiHeadFrozen, MultiHeadSchedule};
