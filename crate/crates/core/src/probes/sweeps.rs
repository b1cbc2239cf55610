use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TaskPair};
use crate::error::{Error, Result};
use crate::nn::{Model, OptimizerConfig, ParamOwner, ParamSnapshot};
use crate::numeric::Rng;
use crate::train::{accuracy, fit, train_second_task, Curves, EvalSet, FirstTask, Protocol};

/// One arm of a freezing sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreezeArm {
    pub frozen: usize,
    /// Task-2 test accuracy before and after each task-2 epoch.
    pub task2_curve: Vec<f64>,
    pub task1_final: f64,
    pub task2_final: f64,
}

/// Trains task 2 from the task-1 model once per `k`, with the lowest `k` stages frozen.
/// Every arm shares the same task-2 shuffling stream, so `k = 0` is the plain run.
pub fn freeze_sweep(
    pair: &TaskPair,
    protocol: &Protocol,
    first: &FirstTask,
    k_values: &[usize],
    shuffle: &Rng,
) -> Result<Vec<FreezeArm>> {
    let stages = first.trained.stage_count();
    if let Some(&k) = k_values.iter().find(|&&k| k > stages) {
        return Err(Error::config("freeze.k", format!("{k} exceeds the {stages} stages")));
    }
    k_values
        .iter()
        .map(|&k| {
            let mut model = first.trained.clone();
            model.freeze_lowest(k)?;
            let mut curves = Curves::new();
            train_second_task(&mut model, pair, protocol, shuffle, &mut curves)?;
            Ok(FreezeArm {
                frozen: k,
                task1_final: *curves["task1"].last().expect("curve has its initial point"),
                task2_final: *curves["task2"].last().expect("curve has its initial point"),
                task2_curve: curves.remove("task2").unwrap_or_default(),
            })
        })
        .collect()
}

/// Which end of the body a reset block starts from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResetDirection {
    FromTop,
    FromBottom,
}

impl ResetDirection {
    /// Stage indices of an `n`-stage block out of `total`.
    pub fn block(self, n: usize, total: usize) -> Vec<usize> {
        match self {
            ResetDirection::FromTop => (total - n..total).collect(),
            ResetDirection::FromBottom => (0..n).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResetArm {
    pub direction: ResetDirection,
    pub stages: usize,
    pub accuracy: f64,
}

/// Task-1 accuracy of `model` after restoring an `n`-stage block from `snapshot`.
/// Heads are never reset; `model` itself is left as it was.
pub fn reset_sweep(
    model: &Model,
    snapshot: &ParamSnapshot,
    direction: ResetDirection,
    n_values: &[usize],
    head: &str,
    eval: &Dataset,
) -> Result<Vec<ResetArm>> {
    let total = model.stage_count();
    if let Some(&n) = n_values.iter().find(|&&n| n > total) {
        return Err(Error::config("reset.n", format!("{n} exceeds the {total} stages")));
    }
    n_values
        .iter()
        .map(|&n| {
            let mut m = model.clone();
            m.restore(snapshot, &direction.block(n, total))?;
            Ok(ResetArm {
                direction,
                stages: n,
                accuracy: accuracy(&m, head, eval)?,
            })
        })
        .collect()
}

/// Keeps stages `1..=n_frozen` at their post-task-2 values, returns the remaining
/// stages and the task-1 head to their post-task-1 values, and retrains those on task 1.
/// Returns the final accuracy on `eval`.
#[allow(clippy::too_many_arguments)]
pub fn reset_and_retrain(
    model: &Model,
    snapshot: &ParamSnapshot,
    n_frozen: usize,
    head: &str,
    train: &Dataset,
    eval: &Dataset,
    epochs: usize,
    opt: &OptimizerConfig,
    shuffle: &mut Rng,
) -> Result<f64> {
    let total = model.stage_count();
    if n_frozen > total {
        return Err(Error::config("reset_retrain.frozen", format!("{n_frozen} exceeds the {total} stages")));
    }
    let mut m = model.clone();
    m.restore(snapshot, &(n_frozen..total).collect::<Vec<_>>())?;
    let prefix = format!("head[{head}].");
    for (name, value) in &snapshot.params {
        if name.starts_with(&prefix) {
            m.set_param(name, value)?;
        }
    }
    m.set_trainability(|o| match o {
        ParamOwner::Stage(i) => i >= n_frozen,
        ParamOwner::Head(h) => h == head,
    });
    m.set_active_head(head)?;
    m.reset_momentum();
    let evals = [EvalSet {
        name: "task1".into(),
        head: head.into(),
        data: eval,
    }];
    let mut curves = Curves::new();
    fit(&mut m, head, train, epochs, opt, None, None, shuffle, &evals, &mut curves)?;
    Ok(*curves["task1"].last().expect("curve has its initial point"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_cluster_task, ClusterTaskConfig, HeadMode};
    use crate::nn::ArchSpec;
    use crate::train::{task_heads, train_first_task};

    fn setup() -> (TaskPair, Protocol, FirstTask) {
        let pair = synth_cluster_task(
            &ClusterTaskConfig {
                head_mode: HeadMode::MultiHead,
                ..ClusterTaskConfig::default()
            },
            &Rng::new(1),
        )
        .unwrap();
        let protocol = Protocol {
            arch: ArchSpec::mlp(16, &[8, 8, 8]),
            opt: OptimizerConfig {
                learning_rate: 0.05,
                momentum: 0.9,
                weight_decay: 0.0,
                batch_size: 16,
            },
            epochs_task1: 3,
            epochs_task2: 2,
        };
        let first = train_first_task(&pair, &protocol, &Rng::new(2), &Rng::new(5)).unwrap();
        (pair, protocol, first)
    }

    #[test]
    fn freeze_zero_matches_plain_run_and_full_freeze_keeps_body() {
        let (pair, protocol, first) = setup();
        let rng = Rng::new(3);
        let arms = freeze_sweep(&pair, &protocol, &first, &[0, 3], &rng).unwrap();
        let mut plain = first.trained.clone();
        let mut curves = Curves::new();
        train_second_task(&mut plain, &pair, &protocol, &rng, &mut curves).unwrap();
        assert_eq!(arms[0].task2_curve, curves["task2"]);
        assert_eq!(arms[0].task1_final, *curves["task1"].last().unwrap());
        // multi-head with a frozen body: the task-1 head never moves either
        assert_eq!(arms[1].task1_final, *first.curves["task1"].last().unwrap());
        assert!(freeze_sweep(&pair, &protocol, &first, &[4], &rng).is_err());
    }

    #[test]
    fn reset_extremes() {
        let (pair, protocol, first) = setup();
        let snap = first.trained.snapshot("post-task1");
        let mut after = first.trained.clone();
        train_second_task(&mut after, &pair, &protocol, &Rng::new(3), &mut Curves::new()).unwrap();
        let head = task_heads(pair.head_mode)[0];
        let before_acc = accuracy(&first.trained, head, &pair.task1.test).unwrap();
        let after_acc = accuracy(&after, head, &pair.task1.test).unwrap();
        for dir in [ResetDirection::FromTop, ResetDirection::FromBottom] {
            let arms = reset_sweep(&after, &snap, dir, &[0, 3], head, &pair.task1.test).unwrap();
            assert_eq!(arms[0].accuracy, after_acc);
            assert_eq!(arms[1].accuracy, before_acc);
        }
        assert_eq!(ResetDirection::FromTop.block(2, 5), vec![3, 4]);
        assert_eq!(ResetDirection::FromBottom.block(2, 5), vec![0, 1]);
    }

    #[test]
    fn retrain_keeps_frozen_stages() {
        let (pair, protocol, first) = setup();
        let snap = first.trained.snapshot("post-task1");
        let mut after = first.trained.clone();
        train_second_task(&mut after, &pair, &protocol, &Rng::new(3), &mut Curves::new()).unwrap();
        let acc = reset_and_retrain(
            &after,
            &snap,
            3,
            "t1",
            &pair.task1.train,
            &pair.task1.test,
            0,
            &protocol.opt,
            &mut Rng::new(4),
        )
        .unwrap();
        // zero epochs with every stage frozen evaluates the post-task-2 body under the post-task-1 head
        assert_eq!(acc, accuracy(&after, "t1", &pair.task1.test).unwrap());
        assert!(reset_and_retrain(&after, &snap, 4, "t1", &pair.task1.train, &pair.task1.test, 1, &protocol.opt, &mut Rng::new(4)).is_err());
    }
}
