//! Epoch loop and evaluation shared by every experiment.

use std::collections::BTreeMap;

use crate::data::{Dataset, HeadMode, Labels, TaskPair};
use crate::error::{Error, Result};
use crate::mitigations::{replay_train_step, ReplayBuffer};
use crate::nn::{argmax, ArchSpec, BatchGroup, Model, OptimizerConfig, Penalty, Targets};
use crate::numeric::{Rng, Tensor};

const EVAL_CHUNK: usize = 512;

/// Buffer examples mixed into every batch.
pub struct ReplayMix<'a> {
    pub buffer: &'a ReplayBuffer,
    pub fraction: f64,
    pub rng: &'a mut Rng,
}

/// A dataset evaluated after every epoch under `name`.
pub struct EvalSet<'a> {
    pub name: String,
    pub head: String,
    pub data: &'a Dataset,
}

/// Accuracy per evaluation set; index 0 is before the first epoch.
pub type Curves = BTreeMap<String, Vec<f64>>;

/// Trains `head` on `train` for `epochs`, reshuffling every epoch from `shuffle`.
/// Returns the mean batch loss of each epoch.
#[allow(clippy::too_many_arguments)]
pub fn fit(
    model: &mut Model,
    head: &str,
    train: &Dataset,
    epochs: usize,
    opt: &OptimizerConfig,
    penalty: Option<&dyn Penalty>,
    mut replay: Option<ReplayMix<'_>>,
    shuffle: &mut Rng,
    evals: &[EvalSet<'_>],
    curves: &mut Curves,
) -> Result<Vec<f64>> {
    opt.validate()?;
    if train.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    record(model, evals, curves, true)?;
    let n = train.len();
    let b = opt.batch_size;
    let n_new = match &replay {
        Some(r) => b - ReplayBuffer::replay_count(r.fraction, b)?,
        None => b,
    };
    let targets = train.targets();
    let mut losses = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let perm = shuffle.permutation(n);
        let mut total = 0.0;
        let mut steps = 0usize;
        if n_new == 0 {
            // batches made entirely of replayed examples, as many as a plain epoch would take
            let r = replay.as_mut().expect("n_new is only zero with replay");
            for _ in 0..n.div_ceil(b) {
                total += replay_train_step(model, None, r.buffer, r.fraction, b, opt, penalty, r.rng)?;
                steps += 1;
            }
        } else {
            for chunk in perm.chunks(n_new) {
                let group = BatchGroup {
                    head,
                    inputs: train.inputs().select_rows(chunk),
                    targets: targets.select(chunk),
                };
                total += match replay.as_mut() {
                    Some(r) => replay_train_step(model, Some(group), r.buffer, r.fraction, b, opt, penalty, r.rng)?,
                    None => model.train_step_groups(&[group], opt, penalty)?,
                };
                steps += 1;
            }
        }
        losses.push(total / steps as f64);
        record(model, evals, curves, false)?;
    }
    Ok(losses)
}

fn record(model: &Model, evals: &[EvalSet<'_>], curves: &mut Curves, initial: bool) -> Result<()> {
    for e in evals {
        let acc = accuracy(model, &e.head, e.data)?;
        let c = curves.entry(e.name.clone()).or_default();
        if initial && !c.is_empty() {
            // a later phase continues an existing curve
            continue;
        }
        c.push(acc);
    }
    Ok(())
}

/// Logits of `head` on every example, computed in chunks.
pub fn logits(model: &Model, head: &str, data: &Dataset) -> Result<Tensor> {
    let n = data.len();
    let classes = model
        .head_classes(head)
        .ok_or_else(|| Error::State(format!("no head `{head}`")))?;
    let mut out = Vec::with_capacity(n * classes);
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (l, _) = model.forward_with_head(head, &data.inputs().select_rows(chunk), &[])?;
        out.extend_from_slice(l.data());
    }
    Ok(Tensor::from_parts(vec![n, classes], out))
}

/// Predicted class per example.
pub fn predictions(model: &Model, head: &str, data: &Dataset) -> Result<Vec<usize>> {
    let l = logits(model, head, data)?;
    Ok((0..l.rows()).map(|i| argmax(l.row(i))).collect())
}

/// Class index each example counts as correct for (argmax of soft labels).
pub fn reference_labels(data: &Dataset) -> Vec<usize> {
    match data.labels() {
        Labels::Hard(v) => v.clone(),
        Labels::Soft(t) => (0..t.rows()).map(|i| argmax(t.row(i))).collect(),
    }
}

pub fn accuracy(model: &Model, head: &str, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty dataset".into()));
    }
    let pred = predictions(model, head, data)?;
    let truth = reference_labels(data);
    let hits = pred.iter().zip(&truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / data.len() as f64)
}

/// Mean cross-entropy of `head` on `data`.
pub fn mean_loss(model: &Model, head: &str, data: &Dataset) -> Result<f64> {
    let l = logits(model, head, data)?;
    let (loss, _) = crate::nn::softmax_cross_entropy(&l, &data.targets(), data.len())?;
    Ok(loss)
}

/// Fraction of each class's examples predicted correctly; `None` for absent classes.
pub fn true_positive_fractions(model: &Model, head: &str, data: &Dataset) -> Result<Vec<Option<f64>>> {
    let pred = predictions(model, head, data)?;
    let truth = reference_labels(data);
    let c = data.n_classes();
    let mut hit = vec![0usize; c];
    let mut tot = vec![0usize; c];
    for (p, t) in pred.iter().zip(&truth) {
        tot[*t] += 1;
        if p == t {
            hit[*t] += 1;
        }
    }
    Ok(hit
        .iter()
        .zip(&tot)
        .map(|(&h, &t)| (t > 0).then(|| h as f64 / t as f64))
        .collect())
}

pub const TASK1_HEAD: &str = "t1";
pub const TASK2_HEAD: &str = "t2";
pub const SHARED_HEAD: &str = "shared";

/// Head used by each task: separate heads in multi-head mode, one shared head otherwise.
pub fn task_heads(mode: HeadMode) -> [&'static str; 2] {
    match mode {
        HeadMode::MultiHead => [TASK1_HEAD, TASK2_HEAD],
        HeadMode::SingleHead => [SHARED_HEAD, SHARED_HEAD],
    }
}

/// Freshly initialized model carrying the heads `pair` needs; task 1's head is active.
pub fn init_model(arch: &ArchSpec, pair: &TaskPair, init: &Rng) -> Result<Model> {
    let mut model = Model::build(arch, &mut init.derive("body"))?;
    let c1 = pair.task1.train.n_classes();
    let c2 = pair.task2.train.n_classes();
    match pair.head_mode {
        HeadMode::MultiHead => {
            model.attach_head(TASK1_HEAD, c1, &mut init.derive(TASK1_HEAD))?;
            model.attach_head(TASK2_HEAD, c2, &mut init.derive(TASK2_HEAD))?;
        }
        HeadMode::SingleHead => {
            if c2 > c1 {
                return Err(Error::Data(format!(
                    "single-head task 2 has {c2} classes but task 1 only {c1}"
                )));
            }
            model.attach_head(SHARED_HEAD, c1, &mut init.derive(SHARED_HEAD))?;
        }
    }
    model.set_active_head(task_heads(pair.head_mode)[0])?;
    Ok(model)
}

/// Per-epoch test accuracy of both tasks, recorded as `task1` and `task2`.
pub fn task_evals(pair: &TaskPair) -> Vec<EvalSet<'_>> {
    let heads = task_heads(pair.head_mode);
    vec![
        EvalSet {
            name: "task1".into(),
            head: heads[0].into(),
            data: &pair.task1.test,
        },
        EvalSet {
            name: "task2".into(),
            head: heads[1].into(),
            data: &pair.task2.test,
        },
    ]
}

/// Trains task `task` (0 or 1) of `pair` with fresh momentum, recording both tasks' test curves.
#[allow(clippy::too_many_arguments)]
pub fn train_task(
    model: &mut Model,
    pair: &TaskPair,
    task: usize,
    epochs: usize,
    opt: &OptimizerConfig,
    penalty: Option<&dyn Penalty>,
    replay: Option<ReplayMix<'_>>,
    shuffle: &mut Rng,
    curves: &mut Curves,
) -> Result<Vec<f64>> {
    let head = task_heads(pair.head_mode)[task];
    let data = if task == 0 { &pair.task1.train } else { &pair.task2.train };
    model.set_active_head(head)?;
    model.reset_momentum();
    fit(model, head, data, epochs, opt, penalty, replay, shuffle, &task_evals(pair), curves)
}

/// Architecture, optimizer and epoch budget of a two-task run.
#[derive(Clone, Debug, PartialEq)]
pub struct Protocol {
    pub arch: ArchSpec,
    pub opt: OptimizerConfig,
    pub epochs_task1: usize,
    pub epochs_task2: usize,
}

/// Models captured along a plain two-task run.
#[derive(Clone, Debug)]
pub struct FirstTask {
    pub initial: Model,
    pub trained: Model,
    pub curves: Curves,
}

/// Initializes from `init` and trains task 1, shuffling from `shuffle/task1`.
pub fn train_first_task(pair: &TaskPair, protocol: &Protocol, init: &Rng, shuffle: &Rng) -> Result<FirstTask> {
    let mut model = init_model(&protocol.arch, pair, init)?;
    let initial = model.clone();
    let mut curves = Curves::new();
    train_task(
        &mut model,
        pair,
        0,
        protocol.epochs_task1,
        &protocol.opt,
        None,
        None,
        &mut shuffle.derive("task1"),
        &mut curves,
    )?;
    Ok(FirstTask {
        initial,
        trained: model,
        curves,
    })
}

/// Plain task-2 training continuing `curves`, shuffled from `shuffle/task2`.
pub fn train_second_task(
    model: &mut Model,
    pair: &TaskPair,
    protocol: &Protocol,
    shuffle: &Rng,
    curves: &mut Curves,
) -> Result<Vec<f64>> {
    train_task(
        model,
        pair,
        1,
        protocol.epochs_task2,
        &protocol.opt,
        None,
        None,
        &mut shuffle.derive("task2"),
        curves,
    )
}

/// Hard targets for a dataset that is known to carry them.
pub fn hard_targets(d: &Dataset) -> Result<Targets> {
    Ok(Targets::Hard(d.hard_labels()?.to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_cluster_task, ClusterTaskConfig};
    use crate::nn::ArchSpec;

    fn opt() -> OptimizerConfig {
        OptimizerConfig {
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 16,
        }
    }

    #[test]
    fn learns_separable_clusters() {
        let t = synth_cluster_task(&ClusterTaskConfig::default(), &Rng::new(1)).unwrap();
        let mut m = Model::build(&ArchSpec::mlp(16, &[16, 16]), &mut Rng::new(2)).unwrap();
        m.attach_head("t1", 2, &mut Rng::new(3)).unwrap();
        let mut curves = Curves::new();
        let evals = [EvalSet {
            name: "test".into(),
            head: "t1".into(),
            data: &t.task1.test,
        }];
        let losses = fit(&mut m, "t1", &t.task1.train, 10, &opt(), None, None, &mut Rng::new(4), &evals, &mut curves)
            .unwrap();
        assert!(losses.last().unwrap() < &losses[0]);
        assert_eq!(curves["test"].len(), 11);
        assert!(*curves["test"].last().unwrap() > 0.9);
    }

    #[test]
    fn fixed_seed_training_is_bit_identical() {
        let t = synth_cluster_task(&ClusterTaskConfig::default(), &Rng::new(1)).unwrap();
        let run = || {
            let mut m = Model::build(&ArchSpec::mlp(16, &[8, 8]), &mut Rng::new(2)).unwrap();
            m.attach_head("t1", 2, &mut Rng::new(3)).unwrap();
            fit(&mut m, "t1", &t.task1.train, 3, &opt(), None, None, &mut Rng::new(4), &[], &mut Curves::new())
                .unwrap();
            m
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn absent_class_is_undefined() {
        let t = synth_cluster_task(&ClusterTaskConfig::default(), &Rng::new(1)).unwrap();
        let mut m = Model::build(&ArchSpec::mlp(16, &[8, 8]), &mut Rng::new(2)).unwrap();
        m.attach_head("t1", 2, &mut Rng::new(3)).unwrap();
        let only0: Vec<usize> = (0..t.task1.test.len())
            .filter(|&i| t.task1.test.hard_labels().unwrap()[i] == 0)
            .collect();
        let tp = true_positive_fractions(&m, "t1", &t.task1.test.select(&only0)).unwrap();
        assert!(tp[0].is_some());
        assert_eq!(tp[1], None);
    }
}
