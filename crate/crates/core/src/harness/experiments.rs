//! One seed of each experiment kind.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analytic::{
    extract_features, head_sgd_simulate, multihead_simulate, overlap_kernel, rotate_features, EvalPoints,
    FeatureMatrix, FrozenHead, MultiHeadFrozen, MultiHeadSchedule, Trajectory,
};
use crate::container::write_atomic;
use crate::data::{make_split_task, Dataset, HeadMode, TaskPair};
use crate::error::{Error, Result};
use crate::harness::config::{AnalyticConfig, ExperimentConfig, ExperimentKind, TaskSpec};
use crate::harness::persist::save_model;
use crate::harness::scopes::{seed_everything, SeedScopes};
use crate::harness::tasks::{
    load_pool, main_pair, mixup_pairs, needs_hundred, other_category_pair, semantic_pairs, Pool,
};
use crate::mitigations::{
    estimate_fisher_diag, headfirst_train, make_task_specific, EwcState, ParamScope, ReplayBuffer,
};
use crate::nn::{Model, Targets};
use crate::numeric::{Rng, Tensor};
use crate::probes::{
    forgetting_report, freeze_sweep, linear_probe, percent_drop, probe_set, record_stage_activations,
    reset_and_retrain, reset_sweep, stage_cka, ForgettingReport, ResetDirection, PROBE_CAP,
};
use crate::train::{
    accuracy, task_evals, task_heads, train_first_task, train_second_task, train_task, Curves, FirstTask, Protocol,
    ReplayMix,
};

/// One configuration inside a sweep.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub group: String,
    pub name: String,
    /// The swept quantity, when it is numeric.
    pub value: Option<f64>,
    pub task1_final: Option<f64>,
    pub task2_final: Option<f64>,
    /// Task-1 percent drop relative to the model after task 1.
    pub percent_drop: Option<f64>,
    pub stage_cka: Vec<(String, f64)>,
    pub extra: BTreeMap<String, f64>,
    pub curves: Curves,
}

impl Arm {
    pub fn new(group: &str, name: impl Into<String>, value: Option<f64>) -> Self {
        Self {
            group: group.to_string(),
            name: name.into(),
            value,
            ..Self::default()
        }
    }

    /// Mean CKA of the top two stages.
    pub fn top2_cka(&self) -> Option<f64> {
        top2_mean(&self.stage_cka)
    }
}

pub fn top2_mean(cka: &[(String, f64)]) -> Option<f64> {
    let n = cka.len();
    (n >= 2).then(|| (cka[n - 1].1 + cka[n - 2].1) / 2.0)
}

/// Everything one seed produced.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    /// Curves of the plain two-task run, when the kind has one.
    pub curves: Curves,
    pub report: Option<ForgettingReport>,
    pub arms: Vec<Arm>,
    pub details: BTreeMap<String, f64>,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
}

/// Replaces every character outside `[A-Za-z0-9._-]` so names stay inside their directory.
pub fn sanitize(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '_' })
        .collect();
    if s.is_empty() || s.chars().all(|c| c == '.') {
        "_".into()
    } else {
        s
    }
}

pub fn seed_dir_name(seed: u64) -> String {
    format!("seed-{seed}")
}

pub fn protocol(cfg: &ExperimentConfig) -> Protocol {
    Protocol {
        arch: cfg.arch.clone(),
        opt: cfg.optimizer.clone(),
        epochs_task1: cfg.epochs.task1,
        epochs_task2: cfg.epochs.task2,
    }
}

struct SeedRun<'a> {
    cfg: &'a ExperimentConfig,
    root: &'a Path,
    dir: String,
    scopes: SeedScopes,
    out: SeedOutcome,
}

impl SeedRun<'_> {
    fn rng(&mut self, scope: &str) -> Result<Rng> {
        self.scopes.take(scope)
    }

    fn path(&self, name: &str) -> (PathBuf, String) {
        let rel = format!("{}/{}", self.dir, sanitize(name));
        (self.root.join(&rel), rel)
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let (path, rel) = self.path(name);
        write_atomic(&path, bytes)?;
        self.out.artifacts.push(rel);
        Ok(())
    }

    fn save(&mut self, name: &str, model: &Model) -> Result<()> {
        let (path, rel) = self.path(&format!("{name}.model"));
        std::fs::create_dir_all(path.parent().expect("artifact has a parent")).map_err(|e| Error::io(&path, e))?;
        save_model(model, name, &path)?;
        self.out.artifacts.push(rel);
        Ok(())
    }

    fn pool(&mut self, hundred: bool) -> Result<Pool> {
        let rng = self.rng("data")?;
        load_pool(&self.cfg.data, hundred, &rng)
    }

    fn main_pair(&mut self) -> Result<TaskPair> {
        let rng = self.rng("data")?;
        let pool = if !matches!(self.cfg.task, TaskSpec::Cluster(_)) {
            Some(load_pool(&self.cfg.data, needs_hundred(self.cfg), &rng)?)
        } else {
            None
        };
        main_pair(self.cfg, pool.as_ref(), &rng.derive("task"))
    }
}

/// The pair the `[task]` section describes for `seed`, as every task-section kind builds it.
pub fn seed_pair(cfg: &ExperimentConfig, seed: u64) -> Result<TaskPair> {
    let mut run = SeedRun {
        cfg,
        root: Path::new("."),
        dir: String::new(),
        scopes: seed_everything(seed),
        out: SeedOutcome::default(),
    };
    run.main_pair()
}

/// Plain task-1 then task-2 training.
pub struct Baseline {
    pub first: FirstTask,
    pub after: Model,
    pub curves: Curves,
}

pub fn run_baseline(pair: &TaskPair, protocol: &Protocol, init: &Rng, shuffle: &Rng) -> Result<Baseline> {
    let first = train_first_task(pair, protocol, init, shuffle)?;
    let mut after = first.trained.clone();
    let mut curves = first.curves.clone();
    train_second_task(&mut after, pair, protocol, shuffle, &mut curves)?;
    Ok(Baseline { first, after, curves })
}

/// Final accuracies, drop and stage CKA of a model trained on task 2 from `before`.
fn two_task_arm(mut arm: Arm, before: &Model, after: &Model, pair: &TaskPair, probe: &Dataset) -> Result<Arm> {
    let heads = task_heads(pair.head_mode);
    let t1_before = accuracy(before, heads[0], &pair.task1.test)?;
    let t1 = accuracy(after, heads[0], &pair.task1.test)?;
    arm.task1_final = Some(t1);
    arm.task2_final = Some(accuracy(after, heads[1], &pair.task2.test)?);
    arm.percent_drop = Some(percent_drop(t1_before, t1)?);
    arm.stage_cka = stage_cka(before, heads[0], after, heads[0], probe)?;
    arm.extra.insert("task1_before".into(), t1_before);
    Ok(arm)
}

fn full_range(values: &[usize], stages: usize) -> Vec<usize> {
    if values.is_empty() {
        (0..=stages).collect()
    } else {
        values.to_vec()
    }
}

/// Runs one seed of `cfg.kind`, writing artifacts below `root/seed-<seed>/`.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, root: &Path) -> Result<SeedOutcome> {
    let mut run = SeedRun {
        cfg,
        root,
        dir: seed_dir_name(seed),
        scopes: seed_everything(seed),
        out: SeedOutcome::default(),
    };
    match cfg.kind {
        ExperimentKind::Anatomy => anatomy(&mut run)?,
        ExperimentKind::Mitigation => mitigation(&mut run)?,
        ExperimentKind::SemanticsSetup1 | ExperimentKind::SemanticsSetup2 => semantics(&mut run)?,
        ExperimentKind::OtherCategory => other_category(&mut run)?,
        ExperimentKind::MixupSweep => mixup(&mut run)?,
        ExperimentKind::SuperclassShift => superclass(&mut run)?,
        ExperimentKind::FrozenAnalytic => frozen_analytic(&mut run)?,
        ExperimentKind::RotationSweep => rotation(&mut run)?,
        ExperimentKind::WidthSweep => width(&mut run)?,
        ExperimentKind::Headfirst => headfirst(&mut run)?,
        ExperimentKind::TaskSpecific => task_specific(&mut run)?,
        ExperimentKind::ResetRetrain => reset_retrain(&mut run)?,
        ExperimentKind::LinearProbe => linear(&mut run)?,
    }
    Ok(run.out)
}

/// Baseline on the main pair with report, saved models and the CKA table.
fn main_baseline(run: &mut SeedRun<'_>) -> Result<(TaskPair, Baseline, Rng)> {
    let pair = run.main_pair()?;
    let init = run.rng("init")?;
    let shuffle = run.rng("shuffle")?;
    let base = run_baseline(&pair, &protocol(run.cfg), &init, &shuffle)?;
    let report = forgetting_report(&base.first.trained, &base.after, &pair, &probe_set(&pair.task1.test))?;
    let mut csv = Vec::new();
    report.write_cka_csv(&mut csv)?;
    run.write("cka.csv", &csv)?;
    run.save("initial", &base.first.initial)?;
    run.save("task1", &base.first.trained)?;
    run.save("task2", &base.after)?;
    run.out.curves = base.curves.clone();
    run.out.report = Some(report);
    Ok((pair, base, shuffle))
}

fn anatomy(run: &mut SeedRun<'_>) -> Result<()> {
    let (pair, base, shuffle) = main_baseline(run)?;
    let stages = base.after.stage_count();
    let proto = protocol(run.cfg);
    for f in freeze_sweep(&pair, &proto, &base.first, &full_range(&run.cfg.probe.freeze_k, stages), &shuffle)? {
        let mut arm = Arm::new("freeze", format!("k={}", f.frozen), Some(f.frozen as f64));
        arm.task1_final = Some(f.task1_final);
        arm.task2_final = Some(f.task2_final);
        arm.curves.insert("task2".into(), f.task2_curve);
        run.out.arms.push(arm);
    }
    let heads = task_heads(pair.head_mode);
    let snap = base.first.trained.snapshot("post-task-1");
    let n_values = full_range(&run.cfg.probe.reset_n, stages);
    for (group, dir) in [("reset-top", ResetDirection::FromTop), ("reset-bottom", ResetDirection::FromBottom)] {
        for r in reset_sweep(&base.after, &snap, dir, &n_values, heads[0], &pair.task1.test)? {
            let mut arm = Arm::new(group, format!("n={}", r.stages), Some(r.stages as f64));
            arm.task1_final = Some(r.accuracy);
            run.out.arms.push(arm);
        }
    }
    Ok(())
}

fn mitigation(run: &mut SeedRun<'_>) -> Result<()> {
    let (pair, base, shuffle) = main_baseline(run)?;
    let cfg = run.cfg;
    let proto = protocol(cfg);
    let heads = task_heads(pair.head_mode);
    let probe = probe_set(&pair.task1.test);
    let baseline_snap = base.after.snapshot("baseline");
    let identical = |m: &Model| if m.snapshot("baseline") == baseline_snap { 1.0 } else { 0.0 };

    let capacity = ((cfg.mitigation.replay_capacity * pair.task1.train.len() as f64).round() as usize).max(1);
    let mut buffer = ReplayBuffer::new(capacity);
    buffer.populate(heads[0], &pair.task1.train, &mut run.rng("buffer-subset")?)?;
    let replay_rng = run.rng("replay")?;
    for &rho in &cfg.mitigation.replay_fractions {
        let mut m = base.first.trained.clone();
        let mut curves = base.first.curves.clone();
        let mut rng = replay_rng.clone();
        train_task(
            &mut m,
            &pair,
            1,
            proto.epochs_task2,
            &proto.opt,
            None,
            Some(ReplayMix {
                buffer: &buffer,
                fraction: rho,
                rng: &mut rng,
            }),
            &mut shuffle.derive("task2"),
            &mut curves,
        )?;
        let mut arm = two_task_arm(Arm::new("replay", format!("rho={rho}"), Some(rho)), &base.first.trained, &m, &pair, &probe)?;
        arm.curves = curves;
        arm.extra.insert("matches_baseline".into(), identical(&m));
        run.out.arms.push(arm);
    }

    let scope = match pair.head_mode {
        HeadMode::MultiHead => ParamScope::Body,
        HeadMode::SingleHead => ParamScope::All,
    };
    let fisher = estimate_fisher_diag(
        &base.first.trained,
        heads[0],
        &pair.task1.train,
        cfg.mitigation.fisher_samples,
        cfg.mitigation.fisher_labels,
        scope,
        &mut run.rng("fisher-subset")?,
    )?;
    for &lambda in &cfg.mitigation.ewc_lambdas {
        let state = EwcState::new(&base.first.trained, fisher.clone(), lambda, cfg.mitigation.fisher_samples)?;
        let mut m = base.first.trained.clone();
        let mut curves = base.first.curves.clone();
        train_task(
            &mut m,
            &pair,
            1,
            proto.epochs_task2,
            &proto.opt,
            state.as_penalty(),
            None,
            &mut shuffle.derive("task2"),
            &mut curves,
        )?;
        let mut arm = two_task_arm(Arm::new("ewc", format!("lambda={lambda}"), Some(lambda)), &base.first.trained, &m, &pair, &probe)?;
        arm.curves = curves;
        arm.extra.insert("matches_baseline".into(), identical(&m));
        arm.extra.insert("param_distance".into(), anchor_distance(&state, &m));
        run.out.arms.push(arm);
    }
    Ok(())
}

/// ‖θ − θ*‖ over the anchored parameters.
fn anchor_distance(state: &EwcState, m: &Model) -> f64 {
    state
        .anchor
        .iter()
        .filter_map(|(n, a)| m.param(n).map(|p| p.sub(a).map(|d| d.frobenius_norm().powi(2)).unwrap_or(0.0)))
        .sum::<f64>()
        .sqrt()
}

fn semantics(run: &mut SeedRun<'_>) -> Result<()> {
    let pool = run.pool(false)?;
    let pairs = semantic_pairs(run.cfg, &pool)?;
    let init = run.rng("init")?;
    let shuffle = run.rng("shuffle")?;
    let proto = protocol(run.cfg);
    let c2 = pairs[0].1.task2.train.n_classes();
    if pairs.iter().any(|(_, p)| p.task2.train.n_classes() != c2) {
        return Err(Error::config("semantics.second", "second tasks must have equally many classes"));
    }
    let first = train_first_task(&pairs[0].1, &proto, &init, &shuffle)?;
    run.save("task1", &first.trained)?;
    for (name, pair) in &pairs {
        let mut m = first.trained.clone();
        let mut curves = first.curves.clone();
        train_second_task(&mut m, pair, &proto, &shuffle, &mut curves)?;
        let mut arm = two_task_arm(Arm::new("second", name.clone(), None), &first.trained, &m, pair, &probe_set(&pair.task1.test))?;
        arm.curves = curves;
        run.out.arms.push(arm);
    }
    Ok(())
}

fn other_category(run: &mut SeedRun<'_>) -> Result<()> {
    let pool = run.pool(false)?;
    let init = run.rng("init")?;
    let shuffle = run.rng("shuffle")?;
    let cfg = run.cfg;
    let proto = protocol(cfg);
    for (name, classes2) in &cfg.semantics.second {
        let plain = make_split_task(&pool.train, &pool.test, &cfg.semantics.task1, classes2)?;
        let plain = if cfg.data.standardize { plain.standardized()? } else { plain };
        let other = other_category_pair(cfg, &pool, classes2, HeadMode::MultiHead)?;
        for (arm_name, pair) in [("plain", &plain), ("other", &other)] {
            let base = run_baseline(pair, &proto, &init, &shuffle)?;
            let mut arm = two_task_arm(Arm::new(name, arm_name, None), &base.first.trained, &base.after, pair, &probe_set(&pair.task1.test))?;
            arm.curves = base.curves;
            run.out.arms.push(arm);
        }
    }
    Ok(())
}

fn mixup(run: &mut SeedRun<'_>) -> Result<()> {
    let pool = run.pool(false)?;
    let cfg = run.cfg;
    let (name, classes2) = cfg.semantics.second.iter().next().expect("validated non-empty");
    let pairing = run.rng("pairing")?;
    let pairs = mixup_pairs(cfg, &pool, classes2, &pairing)?;
    let init = run.rng("init")?;
    let shuffle = run.rng("shuffle")?;
    let proto = protocol(cfg);
    let first = train_first_task(&pairs[0].1, &proto, &init, &shuffle)?;
    for (lambda, pair) in &pairs {
        let mut m = first.trained.clone();
        let mut curves = first.curves.clone();
        train_second_task(&mut m, pair, &proto, &shuffle, &mut curves)?;
        let mut arm = two_task_arm(Arm::new(name, format!("lambda={lambda}"), Some(*lambda)), &first.trained, &m, pair, &probe_set(&pair.task1.test))?;
        arm.curves = curves;
        run.out.arms.push(arm);
    }
    Ok(())
}

fn superclass(run: &mut SeedRun<'_>) -> Result<()> {
    let (pair, base, _) = main_baseline(run)?;
    let heads = task_heads(pair.head_mode);
    // per-class accuracy on the task-2 inputs as well
    let tp2 = crate::train::true_positive_fractions(&base.after, heads[1], &pair.task2.test)?;
    for (name, v) in pair.task2.test.class_names().iter().zip(tp2) {
        if let Some(v) = v {
            run.out.details.insert(format!("task2_tp.{name}"), v);
        }
    }
    Ok(())
}

/// Frozen features of a task-1 network on every split, plus a task-1-trained head.
#[derive(Clone, Debug)]
pub struct FrozenSetup {
    pub g1_train: FeatureMatrix,
    pub g1_test: FeatureMatrix,
    pub g2_train: FeatureMatrix,
    pub y1_train: Vec<usize>,
    pub y1_test: Vec<usize>,
    pub y2_train: Vec<usize>,
    pub head: FrozenHead,
    /// Task-1 test accuracy of the trained frozen head.
    pub head_accuracy: f64,
}

impl FrozenSetup {
    /// Extracts features from `model` and trains a zero-initialized head on task 1.
    pub fn new(model: &Model, pair: &TaskPair, a: &AnalyticConfig) -> Result<Self> {
        let c1 = pair.task1.train.n_classes();
        let c2 = pair.task2.train.n_classes();
        if c2 > c1 {
            return Err(Error::Data(format!(
                "the frozen model shares one head; task 2 has {c2} classes but task 1 only {c1}"
            )));
        }
        let snap = model.snapshot("post-task-1");
        let feats = |d: &Dataset| extract_features(model, &snap, d, a.tap);
        let g1_train = feats(&pair.task1.train)?;
        let g1_test = feats(&pair.task1.test)?;
        let y1_train = pair.task1.train.hard_labels()?.to_vec();
        let y1_test = pair.task1.test.hard_labels()?.to_vec();
        let mut head = FrozenHead::zeros(g1_train.width(), c1, a.learning_rate);
        let t1 = head_sgd_simulate(
            &mut head,
            &g1_train,
            &Targets::Hard(y1_train.clone()),
            EvalPoints {
                features: &g1_test,
                labels: &y1_test,
            },
            a.task1_steps,
            a.batch,
        )?;
        Ok(Self {
            g2_train: feats(&pair.task2.train)?,
            y2_train: pair.task2.train.hard_labels()?.to_vec(),
            g1_train,
            g1_test,
            y1_train,
            y1_test,
            head,
            head_accuracy: t1.final_step().task1_acc,
        })
    }

    pub fn eval(&self) -> EvalPoints<'_> {
        EvalPoints {
            features: &self.g1_test,
            labels: &self.y1_test,
        }
    }

    /// Head-only task-2 training on `features` (task-2 labels) from the task-1 head.
    pub fn simulate_task2(&self, features: &FeatureMatrix, steps: usize, batch: Option<usize>) -> Result<Trajectory> {
        let mut head = self.head.clone();
        head_sgd_simulate(&mut head, features, &Targets::Hard(self.y2_train.clone()), self.eval(), steps, batch)
    }
}

fn frozen_setup(run: &mut SeedRun<'_>) -> Result<FrozenSetup> {
    let pair = run.main_pair()?;
    let init = run.rng("init")?;
    let shuffle = run.rng("shuffle")?;
    let first = train_first_task(&pair, &protocol(run.cfg), &init, &shuffle)?;
    run.save("initial", &first.initial)?;
    run.save("task1", &first.trained)?;
    let s = FrozenSetup::new(&first.trained, &pair, &run.cfg.analytic)?;
    run.out.details.insert("task1_head_accuracy".into(), s.head_accuracy);
    Ok(s)
}

fn trajectory_arm(run: &mut SeedRun<'_>, mut arm: Arm, t: &Trajectory) -> Result<Arm> {
    let first = &t.steps[0];
    let last = t.final_step();
    arm.task1_final = Some(last.task1_acc);
    arm.percent_drop = Some(if first.task1_acc > 0.0 { percent_drop(first.task1_acc, last.task1_acc)? } else { 0.0 });
    for (k, v) in [
        ("task1_before", first.task1_acc),
        ("task2_loss_final", last.task2_loss),
        ("max_bound_excess", t.max_bound_excess()),
        ("max_kernel_error", t.max_kernel_error()),
        ("max_logit_drift", t.steps.iter().map(|s| s.logit_drift).fold(0.0, f64::max)),
        ("weight_distance", last.weight_distance),
    ] {
        arm.extra.insert(k.into(), v);
    }
    arm.curves.insert("task1".into(), t.steps.iter().map(|s| s.task1_acc).collect());
    let mut csv = Vec::new();
    t.write_csv(&mut csv)?;
    run.write(&format!("trajectory-{}-{}.csv", arm.group, arm.name), &csv)?;
    Ok(arm)
}

fn frozen_analytic(run: &mut SeedRun<'_>) -> Result<()> {
    let s = frozen_setup(run)?;
    let a = run.cfg.analytic.clone();
    let eval = s.eval();
    for (name, g, y) in [("task2", &s.g2_train, &s.y2_train), ("identical", &s.g1_train, &s.y1_train)] {
        let mut head = s.head.clone();
        let t = head_sgd_simulate(&mut head, g, &Targets::Hard(y.clone()), eval, a.steps, a.batch)?;
        let arm = trajectory_arm(run, Arm::new("single-head", name, None), &t)?;
        run.out.arms.push(arm);
    }
    // multi-head: identity linear layer, the task-1 head as h1 and a fresh h2
    let p = s.g1_train.width();
    let c2 = s.y2_train.iter().max().map_or(1, |m| m + 1);
    let mut mh = MultiHeadFrozen {
        theta: Tensor::eye(p),
        head1: s.head.theta.clone(),
        head2: Tensor::zeros(&[p, c2]),
        learning_rate: a.learning_rate,
    };
    let t = multihead_simulate(
        &mut mh,
        &s.g2_train,
        &Targets::Hard(s.y2_train.clone()),
        eval,
        MultiHeadSchedule {
            head_steps: a.multihead_head_steps,
            body_steps: a.multihead_body_steps,
            batch: a.batch,
        },
    )?;
    let mut arm = trajectory_arm(run, Arm::new("multi-head", "task2", None), &t)?;
    let h1 = &mh.head1;
    let h2 = &mh.head2;
    arm.extra.insert("head_similarity".into(), h2.transpose()?.matmul(h1)?.frobenius_norm());
    run.out.arms.push(arm);
    Ok(())
}

fn rotation(run: &mut SeedRun<'_>) -> Result<()> {
    let s = frozen_setup(run)?;
    let a = run.cfg.analytic.clone();
    let theta0 = overlap_kernel(&s.g1_test, &s.g2_train)?.theta.frobenius_norm();
    for &th in &a.thetas {
        let g2 = rotate_features(&s.g2_train, th, &s.g1_test)?;
        let overlap = overlap_kernel(&s.g1_test, &g2)?.theta.frobenius_norm();
        let t = s.simulate_task2(&g2, a.steps, a.batch)?;
        let mut arm = trajectory_arm(run, Arm::new("rotation", format!("theta={th:.4}"), Some(th)), &t)?;
        arm.extra.insert("overlap".into(), overlap);
        arm.extra.insert("overlap_ratio".into(), if theta0 > 0.0 { overlap / theta0 } else { 0.0 });
        run.out.arms.push(arm);
    }
    Ok(())
}

fn width(run: &mut SeedRun<'_>) -> Result<()> {
    let pair = run.main_pair()?;
    let init = run.rng("init")?;
    let shuffle = run.rng("shuffle")?;
    let probe = probe_set(&pair.task1.test);
    for &m in &run.cfg.width.multipliers.clone() {
        let proto = Protocol {
            arch: run.cfg.arch.clone().with_multiplier(m),
            ..protocol(run.cfg)
        };
        let base = run_baseline(&pair, &proto, &init, &shuffle)?;
        let mut arm = two_task_arm(Arm::new("width", format!("x{m}"), Some(m)), &base.first.trained, &base.after, &pair, &probe)?;
        arm.extra.insert("params".into(), base.after.param_count() as f64);
        arm.curves = base.curves;
        run.out.arms.push(arm);
    }
    Ok(())
}

fn headfirst(run: &mut SeedRun<'_>) -> Result<()> {
    let (pair, base, shuffle) = main_baseline(run)?;
    let proto = protocol(run.cfg);
    let heads = task_heads(pair.head_mode);
    let probe = probe_set(&pair.task1.test);
    for &e in &run.cfg.mitigation.headfirst_epochs.clone() {
        let mut m = base.first.trained.clone();
        let mut curves = base.first.curves.clone();
        m.reset_momentum();
        headfirst_train(
            &mut m,
            heads[1],
            &pair.task2.train,
            e,
            &proto.opt,
            &mut shuffle.derive("headfirst"),
            &task_evals(&pair),
            &mut curves,
        )?;
        train_second_task(&mut m, &pair, &proto, &shuffle, &mut curves)?;
        let mut arm = two_task_arm(Arm::new("headfirst", format!("epochs={e}"), Some(e as f64)), &base.first.trained, &m, &pair, &probe)?;
        arm.curves = curves;
        run.out.arms.push(arm);
    }
    Ok(())
}

fn task_specific(run: &mut SeedRun<'_>) -> Result<()> {
    let (pair, base, shuffle) = main_baseline(run)?;
    let proto = protocol(run.cfg);
    let heads = task_heads(pair.head_mode);
    let tasks: Vec<String> = heads.iter().map(|h| h.to_string()).collect();
    let probe = probe_set(&pair.task1.test);
    for &n in &run.cfg.mitigation.task_specific_stages.clone() {
        if n > 0 && pair.head_mode == HeadMode::SingleHead {
            return Err(Error::config("mitigation.task_specific_stages", "task-specific stages need separate task heads"));
        }
        let mut m = make_task_specific(&base.first.trained, n, &tasks)?;
        let mut curves = base.first.curves.clone();
        train_second_task(&mut m, &pair, &proto, &shuffle, &mut curves)?;
        let mut arm = two_task_arm(Arm::new("task-specific", format!("stages={n}"), Some(n as f64)), &base.first.trained, &m, &pair, &probe)?;
        arm.extra.insert("params".into(), m.param_count() as f64);
        arm.curves = curves;
        run.out.arms.push(arm);
    }
    Ok(())
}

fn reset_retrain(run: &mut SeedRun<'_>) -> Result<()> {
    let (pair, base, shuffle) = main_baseline(run)?;
    let cfg = run.cfg;
    let heads = task_heads(pair.head_mode);
    let snap = base.first.trained.snapshot("post-task-1");
    for n in full_range(&cfg.probe.retrain_frozen, base.after.stage_count()) {
        let acc = reset_and_retrain(
            &base.after,
            &snap,
            n,
            heads[0],
            &pair.task1.train,
            &pair.task1.test,
            cfg.probe.retrain_epochs,
            &cfg.optimizer,
            &mut shuffle.derive(&format!("retrain-{n}")),
        )?;
        let mut arm = Arm::new("retrain", format!("frozen={n}"), Some(n as f64));
        arm.task1_final = Some(acc);
        run.out.arms.push(arm);
    }
    Ok(())
}

fn linear(run: &mut SeedRun<'_>) -> Result<()> {
    let (pair, base, _) = main_baseline(run)?;
    let heads = task_heads(pair.head_mode);
    let stages: Vec<usize> = (0..base.after.stage_count()).collect();
    let train = pair.task1.train.head(PROBE_CAP);
    let test = probe_set(&pair.task1.test);
    let ytr = train.hard_labels()?.to_vec();
    let yte = test.hard_labels()?.to_vec();
    let c = pair.task1.train.n_classes();
    for (name, model) in [("pre", &base.first.trained), ("post", &base.after), ("random", &base.first.initial)] {
        let a = record_stage_activations(model, heads[0], &train, &stages)?;
        let b = record_stage_activations(model, heads[0], &test, &stages)?;
        let r = linear_probe(&a, &ytr, &b, &yte, c, &run.cfg.probe.linear)?;
        let mut arm = Arm::new("probe", name, None);
        arm.task1_final = Some(r.accuracy);
        arm.extra.insert("train_accuracy".into(), r.train_accuracy);
        arm.extra.insert("iterations".into(), r.iterations as f64);
        arm.extra.insert("converged".into(), if r.converged { 1.0 } else { 0.0 });
        if let Some((_, top)) = r.stage_mass.last() {
            arm.extra.insert("top_stage_mass".into(), *top);
        }
        for (s, v) in &r.stage_mass {
            arm.extra.insert(format!("mass.{s}"), *v);
        }
        run.out.arms.push(arm);
    }
    run.out.details.insert("head_accuracy_pre".into(), accuracy(&base.first.trained, heads[0], &test)?);
    run.out.details.insert("head_accuracy_post".into(), accuracy(&base.after, heads[0], &test)?);
    Ok(())
}
