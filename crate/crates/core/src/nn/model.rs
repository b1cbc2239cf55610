use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::arch::{ArchKind, ArchSpec};
use crate::nn::layers::{Conv2d, Dense, Stage, StageCache};
use crate::nn::optim::{momentum_update, OptimizerConfig};
use crate::nn::snapshot::ParamSnapshot;
use crate::numeric::{fnv1a, Rng, Tensor};

/// Gradients keyed by parameter name.
pub type Grads = BTreeMap<String, Tensor>;

/// Per-example targets: class indices or rows of a probability matrix.
#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    Hard(Vec<usize>),
    Soft(Tensor),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Hard(v) => v.len(),
            Targets::Soft(t) => t.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Hard(v) => Targets::Hard(idx.iter().map(|&i| v[i]).collect()),
            Targets::Soft(t) => Targets::Soft(t.select_rows(idx)),
        }
    }
}

/// A slice of a training batch routed through one head.
#[derive(Clone, Debug)]
pub struct BatchGroup<'a> {
    pub head: &'a str,
    pub inputs: Tensor,
    pub targets: Targets,
}

/// Extra differentiable loss term added to the data loss.
pub trait Penalty {
    fn value(&self, model: &Model) -> Result<f64>;
    /// Adds `∂penalty/∂θ` into `grads` (entries for absent names are created).
    fn add_grad(&self, model: &Model, grads: &mut Grads) -> Result<()>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamOwner<'a> {
    Stage(usize),
    Head(&'a str),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradScope {
    /// Every parameter receives a gradient.
    All,
    /// Backprop stops below the lowest trainable stage.
    Trainable,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageUnit {
    pub stage: Stage,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub enum StageSlot {
    Shared(StageUnit),
    /// One copy per task id, selected by the head in use.
    PerTask(BTreeMap<String, StageUnit>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadUnit {
    pub layer: Dense,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    spec: ArchSpec,
    slots: Vec<StageSlot>,
    heads: BTreeMap<String, HeadUnit>,
    active: Option<String>,
    velocity: BTreeMap<String, Tensor>,
}

pub fn stage_name(idx: usize) -> String {
    format!("stage{}", idx + 1)
}

impl Model {
    /// Initializes every body stage with fan-in scaled Gaussian weights
    /// (`N(0, 2/fan_in)`) and zero biases. No heads are attached.
    pub fn build(spec: &ArchSpec, rng: &mut Rng) -> Result<Model> {
        spec.validate()?;
        let widths = spec.effective_widths();
        let mut stages = Vec::with_capacity(widths.len());
        let mut prev = spec.input_shape[0];
        for &w in &widths {
            let stage = match spec.kind {
                ArchKind::Mlp => Stage::Dense(Dense::gaussian(prev, w, (2.0 / prev as f64).sqrt(), rng)),
                ArchKind::Conv => Stage::Conv {
                    c1: Conv2d::he(prev, w, spec.kernel, rng),
                    c2: Conv2d::he(w, w, spec.kernel, rng),
                },
                ArchKind::ConvResidual => Stage::Residual {
                    c1: Conv2d::he(prev, w, spec.kernel, rng),
                    c2: Conv2d::he(w, w, spec.kernel, rng),
                    proj: (prev != w).then(|| Conv2d::he(prev, w, 1, rng)),
                },
            };
            stages.push(stage);
            prev = w;
        }
        Self::from_stages(spec.clone(), stages)
    }

    /// Assembles a model from explicit stages (shapes are checked against `spec`).
    pub fn from_stages(spec: ArchSpec, stages: Vec<Stage>) -> Result<Model> {
        spec.validate()?;
        if stages.len() != spec.stage_count() {
            return Err(Error::config(
                "arch.widths",
                format!("{} stages supplied for a {}-stage spec", stages.len(), spec.stage_count()),
            ));
        }
        let model = Model {
            spec,
            slots: stages
                .into_iter()
                .map(|stage| StageSlot::Shared(StageUnit { stage, trainable: true }))
                .collect(),
            heads: BTreeMap::new(),
            active: None,
            velocity: BTreeMap::new(),
        };
        let probe = Tensor::zeros(&[&[1][..], &model.spec.input_shape[..]].concat());
        let (_, feats) = model.body_forward(&probe, None, None)?;
        if feats.cols() != model.spec.feature_count() {
            return Err(Error::config("arch", "stage shapes do not match the architecture"));
        }
        Ok(model)
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn stage_count(&self) -> usize {
        self.slots.len()
    }

    pub fn slots(&self) -> &[StageSlot] {
        &self.slots
    }

    pub fn feature_count(&self) -> usize {
        self.spec.feature_count()
    }

    /// Fresh head with weights `N(0, 1/n_f)` and zero biases.
    pub fn attach_head(&mut self, id: &str, n_classes: usize, rng: &mut Rng) -> Result<()> {
        let n_f = self.feature_count();
        let layer = Dense::gaussian(n_f, n_classes, (1.0 / n_f as f64).sqrt(), rng);
        self.attach_head_with(id, layer)
    }

    pub fn attach_head_with(&mut self, id: &str, layer: Dense) -> Result<()> {
        if self.heads.contains_key(id) {
            return Err(Error::State(format!("head `{id}` already attached")));
        }
        if layer.n_in() != self.feature_count() {
            return Err(Error::Dimension {
                op: "attach_head",
                left: vec![self.feature_count()],
                right: layer.w.shape().to_vec(),
            });
        }
        self.heads.insert(id.to_string(), HeadUnit { layer, trainable: true });
        if self.active.is_none() {
            self.active = Some(id.to_string());
        }
        Ok(())
    }

    pub fn set_active_head(&mut self, id: &str) -> Result<()> {
        if !self.heads.contains_key(id) {
            return Err(Error::State(format!("no head `{id}`")));
        }
        self.active = Some(id.to_string());
        Ok(())
    }

    pub fn active_head(&self) -> Option<&str> {
        self.active.as_deref()
    }

    pub fn head(&self, id: &str) -> Option<&Dense> {
        self.heads.get(id).map(|h| &h.layer)
    }

    pub fn head_mut(&mut self, id: &str) -> Option<&mut Dense> {
        self.heads.get_mut(id).map(|h| &mut h.layer)
    }

    pub fn head_ids(&self) -> Vec<String> {
        self.heads.keys().cloned().collect()
    }

    pub fn head_classes(&self, id: &str) -> Option<usize> {
        self.head(id).map(Dense::n_out)
    }

    /// Stage used when routing through `route` (a head id).
    pub fn stage(&self, idx: usize, route: Option<&str>) -> Result<&Stage> {
        Ok(&self.unit(idx, route)?.stage)
    }

    pub fn stage_mut(&mut self, idx: usize, route: Option<&str>) -> Result<&mut Stage> {
        Ok(&mut self.unit_mut(idx, route)?.stage)
    }

    fn unit(&self, idx: usize, route: Option<&str>) -> Result<&StageUnit> {
        match self.slots.get(idx) {
            None => Err(Error::State(format!("unknown stage index {idx}"))),
            Some(StageSlot::Shared(u)) => Ok(u),
            Some(StageSlot::PerTask(m)) => {
                let r = route.ok_or_else(|| Error::State(format!("{} is task-specific; a route is needed", stage_name(idx))))?;
                m.get(r)
                    .ok_or_else(|| Error::State(format!("{} has no branch for task `{r}`", stage_name(idx))))
            }
        }
    }

    fn unit_mut(&mut self, idx: usize, route: Option<&str>) -> Result<&mut StageUnit> {
        match self.slots.get_mut(idx) {
            None => Err(Error::State(format!("unknown stage index {idx}"))),
            Some(StageSlot::Shared(u)) => Ok(u),
            Some(StageSlot::PerTask(m)) => {
                let r = route.ok_or_else(|| Error::State(format!("{} is task-specific; a route is needed", stage_name(idx))))?;
                m.get_mut(r)
                    .ok_or_else(|| Error::State(format!("{} has no branch for task `{r}`", stage_name(idx))))
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn body_param_count(&self) -> usize {
        self.named_params()
            .iter()
            .filter(|(n, _)| !n.starts_with("head["))
            .map(|(_, t)| t.len())
            .sum()
    }

    /// All parameters in a fixed order: stages bottom-up, then heads by id.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, slot) in self.slots.iter().enumerate() {
            match slot {
                StageSlot::Shared(u) => {
                    for (n, t) in u.stage.param_names().iter().zip(u.stage.params()) {
                        out.push((format!("{}.{n}", stage_name(i)), t));
                    }
                }
                StageSlot::PerTask(m) => {
                    for (task, u) in m {
                        for (n, t) in u.stage.param_names().iter().zip(u.stage.params()) {
                            out.push((format!("{}[{task}].{n}", stage_name(i)), t));
                        }
                    }
                }
            }
        }
        for (id, h) in &self.heads {
            out.push((format!("head[{id}].w"), &h.layer.w));
            out.push((format!("head[{id}].b"), &h.layer.b));
        }
        out
    }

    /// Mutable parameters with their trainability and stage index (`None` for heads).
    fn params_mut_flagged(&mut self) -> Vec<(String, &mut Tensor, bool, Option<usize>)> {
        let mut out = Vec::new();
        for (i, slot) in self.slots.iter_mut().enumerate() {
            match slot {
                StageSlot::Shared(u) => {
                    let names = u.stage.param_names();
                    let tr = u.trainable;
                    for (n, t) in names.iter().zip(u.stage.params_mut()) {
                        out.push((format!("{}.{n}", stage_name(i)), t, tr, Some(i)));
                    }
                }
                StageSlot::PerTask(m) => {
                    for (task, u) in m.iter_mut() {
                        let names = u.stage.param_names();
                        let tr = u.trainable;
                        for (n, t) in names.iter().zip(u.stage.params_mut()) {
                            out.push((format!("{}[{task}].{n}", stage_name(i)), t, tr, Some(i)));
                        }
                    }
                }
            }
        }
        for (id, h) in self.heads.iter_mut() {
            let tr = h.trainable;
            out.push((format!("head[{id}].w"), &mut h.layer.w, tr, None));
            out.push((format!("head[{id}].b"), &mut h.layer.b, tr, None));
        }
        out
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.named_params().into_iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Overwrites one named parameter (shape must match).
    pub fn set_param(&mut self, name: &str, value: &Tensor) -> Result<()> {
        for (n, t, _, _) in self.params_mut_flagged() {
            if n == name {
                if t.shape() != value.shape() {
                    return Err(Error::Dimension {
                        op: "set_param",
                        left: t.shape().to_vec(),
                        right: value.shape().to_vec(),
                    });
                }
                t.data_mut().copy_from_slice(value.data());
                return Ok(());
            }
        }
        Err(Error::State(format!("no parameter `{name}`")))
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        let mut probe = self.clone();
        probe
            .params_mut_flagged()
            .into_iter()
            .find(|(n, ..)| n == name)
            .is_some_and(|(_, _, tr, _)| tr)
    }

    pub fn set_stage_trainable(&mut self, idx: usize, trainable: bool) -> Result<()> {
        match self.slots.get_mut(idx) {
            None => Err(Error::State(format!("unknown stage index {idx}"))),
            Some(StageSlot::Shared(u)) => {
                u.trainable = trainable;
                Ok(())
            }
            Some(StageSlot::PerTask(m)) => {
                m.values_mut().for_each(|u| u.trainable = trainable);
                Ok(())
            }
        }
    }

    pub fn set_head_trainable(&mut self, id: &str, trainable: bool) -> Result<()> {
        let h = self
            .heads
            .get_mut(id)
            .ok_or_else(|| Error::State(format!("no head `{id}`")))?;
        h.trainable = trainable;
        Ok(())
    }

    /// Sets every stage and head flag from a predicate.
    pub fn set_trainability(&mut self, pred: impl Fn(ParamOwner<'_>) -> bool) {
        for (i, slot) in self.slots.iter_mut().enumerate() {
            let t = pred(ParamOwner::Stage(i));
            match slot {
                StageSlot::Shared(u) => u.trainable = t,
                StageSlot::PerTask(m) => m.values_mut().for_each(|u| u.trainable = t),
            }
        }
        for (id, h) in self.heads.iter_mut() {
            h.trainable = pred(ParamOwner::Head(id));
        }
    }

    /// Freezes stages `0..k` and unfreezes the rest of the body.
    pub fn freeze_lowest(&mut self, k: usize) -> Result<()> {
        if k > self.stage_count() {
            return Err(Error::State(format!("cannot freeze {k} of {} stages", self.stage_count())));
        }
        for i in 0..self.stage_count() {
            self.set_stage_trainable(i, i >= k)?;
        }
        Ok(())
    }

    pub fn stage_trainable(&self, idx: usize) -> bool {
        match self.slots.get(idx) {
            Some(StageSlot::Shared(u)) => u.trainable,
            Some(StageSlot::PerTask(m)) => m.values().any(|u| u.trainable),
            None => false,
        }
    }

    pub fn reset_momentum(&mut self) {
        self.velocity.clear();
    }

    fn as_batch(&self, inputs: &Tensor) -> Result<Tensor> {
        let n = inputs.rows();
        if inputs.cols() != self.spec.input_len() {
            return Err(Error::Dimension {
                op: "forward",
                left: inputs.shape().to_vec(),
                right: self.spec.input_shape.clone(),
            });
        }
        let mut shape = vec![n];
        shape.extend_from_slice(&self.spec.input_shape);
        inputs.clone().reshape(shape)
    }

    /// Runs the body, returning per-stage caches (if requested) and the
    /// flattened output of the last stage.
    fn body_forward(
        &self,
        inputs: &Tensor,
        route: Option<&str>,
        mut caches: Option<&mut Vec<StageCache>>,
    ) -> Result<(Vec<Tensor>, Tensor)> {
        let mut x = self.as_batch(inputs)?;
        let mut outs = Vec::with_capacity(self.slots.len());
        for i in 0..self.slots.len() {
            let stage = self.stage(i, route)?;
            let (y, cache) = stage.forward_cached(&x);
            if let Some(c) = caches.as_deref_mut() {
                c.push(cache);
            }
            outs.push(y.clone());
            x = y;
        }
        Ok((outs, x.flatten_rows()))
    }

    /// Logits of the active head plus flattened activations of the captured stages.
    pub fn forward(&self, batch: &Tensor, capture: &[usize]) -> Result<(Tensor, BTreeMap<usize, Tensor>)> {
        let head = self
            .active
            .clone()
            .ok_or_else(|| Error::State("no active head".into()))?;
        self.forward_with_head(&head, batch, capture)
    }

    pub fn forward_with_head(
        &self,
        head: &str,
        batch: &Tensor,
        capture: &[usize],
    ) -> Result<(Tensor, BTreeMap<usize, Tensor>)> {
        let h = self
            .heads
            .get(head)
            .ok_or_else(|| Error::State(format!("no head `{head}`")))?;
        for &c in capture {
            if c >= self.slots.len() {
                return Err(Error::State(format!("unknown stage index {c}")));
            }
        }
        let (outs, feats) = self.body_forward(batch, Some(head), None)?;
        let acts = capture
            .iter()
            .map(|&c| (c, outs[c].clone().flatten_rows()))
            .collect();
        Ok((h.layer.forward(&feats), acts))
    }

    /// Flattened activations of every stage along the route of `head`.
    pub fn stage_activations(&self, route: Option<&str>, batch: &Tensor) -> Result<Vec<Tensor>> {
        let (outs, _) = self.body_forward(batch, route, None)?;
        Ok(outs.into_iter().map(Tensor::flatten_rows).collect())
    }

    pub fn predict(&self, head: &str, batch: &Tensor) -> Result<Vec<usize>> {
        let (logits, _) = self.forward_with_head(head, batch, &[])?;
        Ok((0..logits.rows()).map(|i| argmax(logits.row(i))).collect())
    }

    /// Mean cross-entropy over all groups plus the penalty, and its gradient.
    pub fn loss_and_grads(
        &self,
        groups: &[BatchGroup<'_>],
        penalty: Option<&dyn Penalty>,
        scope: GradScope,
    ) -> Result<(f64, Grads)> {
        let total: usize = groups.iter().map(|g| g.inputs.rows()).sum();
        let mut grads = Grads::new();
        let mut loss = 0.0;
        if total > 0 {
            let lowest = match scope {
                GradScope::All => 0,
                GradScope::Trainable => (0..self.slots.len())
                    .find(|&i| self.stage_trainable(i))
                    .unwrap_or(self.slots.len()),
            };
            for g in groups.iter().filter(|g| g.inputs.rows() > 0) {
                let head = self
                    .heads
                    .get(g.head)
                    .ok_or_else(|| Error::State(format!("no head `{}`", g.head)))?;
                if g.targets.len() != g.inputs.rows() {
                    return Err(Error::Data(format!(
                        "{} targets for {} examples",
                        g.targets.len(),
                        g.inputs.rows()
                    )));
                }
                let mut caches = Vec::new();
                let (_, feats) = self.body_forward(&g.inputs, Some(g.head), Some(&mut caches))?;
                let logits = head.layer.forward(&feats);
                let (l, dlogits) = softmax_cross_entropy(&logits, &g.targets, total)?;
                loss += l;
                let (dfeat, dw, db) = head.layer.backward(&feats, &dlogits);
                accumulate(&mut grads, format!("head[{}].w", g.head), dw);
                accumulate(&mut grads, format!("head[{}].b", g.head), db);
                let mut dy = dfeat;
                for i in (lowest..self.slots.len()).rev() {
                    let stage = self.stage(i, Some(g.head))?;
                    let dy_shaped = dy.reshape(out_shape(&caches[i]))?;
                    let (dx, pgrads) = stage.backward(&caches[i], &dy_shaped);
                    let prefix = match &self.slots[i] {
                        StageSlot::Shared(_) => stage_name(i),
                        StageSlot::PerTask(_) => format!("{}[{}]", stage_name(i), g.head),
                    };
                    for (n, t) in stage.param_names().iter().zip(pgrads) {
                        accumulate(&mut grads, format!("{prefix}.{n}"), t);
                    }
                    dy = dx;
                }
            }
        }
        if let Some(p) = penalty {
            loss += p.value(self)?;
            p.add_grad(self, &mut grads)?;
        }
        if !loss.is_finite() {
            return Err(Error::Numeric("non-finite training loss".into()));
        }
        Ok((loss, grads))
    }

    /// One momentum-SGD step on the active head; returns the pre-step loss.
    pub fn train_step(
        &mut self,
        inputs: &Tensor,
        targets: &Targets,
        opt: &OptimizerConfig,
        penalty: Option<&dyn Penalty>,
    ) -> Result<f64> {
        let head = self
            .active
            .clone()
            .ok_or_else(|| Error::State("no active head".into()))?;
        let group = BatchGroup {
            head: &head,
            inputs: inputs.clone(),
            targets: targets.clone(),
        };
        self.train_step_groups(&[group], opt, penalty)
    }

    /// One step on a batch whose rows may be routed through different heads.
    pub fn train_step_groups(
        &mut self,
        groups: &[BatchGroup<'_>],
        opt: &OptimizerConfig,
        penalty: Option<&dyn Penalty>,
    ) -> Result<f64> {
        for g in groups {
            let classes = self
                .head_classes(g.head)
                .ok_or_else(|| Error::State(format!("no head `{}`", g.head)))?;
            check_targets(&g.targets, classes)?;
        }
        let (loss, grads) = self.loss_and_grads(groups, penalty, GradScope::Trainable)?;
        self.apply_gradients(&grads, opt);
        Ok(loss)
    }

    /// Momentum SGD with L2 weight decay on trainable parameters only.
    pub fn apply_gradients(&mut self, grads: &Grads, opt: &OptimizerConfig) {
        let mut velocity = std::mem::take(&mut self.velocity);
        for (name, param, trainable, _) in self.params_mut_flagged() {
            if !trainable {
                continue;
            }
            let zero;
            let g = match grads.get(&name) {
                Some(g) => g,
                None => {
                    zero = Tensor::zeros(param.shape());
                    &zero
                }
            };
            let v = velocity
                .entry(name)
                .or_insert_with(|| Tensor::zeros(param.shape()));
            momentum_update(param.data_mut(), g.data(), v.data_mut(), opt);
        }
        self.velocity = velocity;
    }

    /// Identifies the body layout (stage kinds, branches, parameter shapes); heads excluded.
    pub fn fingerprint(&self) -> u64 {
        let mut desc = format!("{:?}|{:?}|", self.spec.kind, self.spec.input_shape);
        for (n, t) in self.named_params() {
            if !n.starts_with("head[") {
                desc.push_str(&format!("{n}:{:?};", t.shape()));
            }
        }
        fnv1a(desc.as_bytes())
    }

    pub fn snapshot(&self, label: &str) -> ParamSnapshot {
        ParamSnapshot {
            label: label.to_string(),
            fingerprint: self.fingerprint(),
            params: self
                .named_params()
                .into_iter()
                .map(|(n, t)| (n, t.clone()))
                .collect(),
        }
    }

    /// Restores the parameters of the listed stages (all branches) from `snap`.
    pub fn restore(&mut self, snap: &ParamSnapshot, stages: &[usize]) -> Result<()> {
        self.check_fingerprint(snap)?;
        for &s in stages {
            if s >= self.stage_count() {
                return Err(Error::State(format!("unknown stage index {s}")));
            }
        }
        for (name, param, _, idx) in self.params_mut_flagged() {
            if idx.is_some_and(|i| stages.contains(&i)) {
                let src = snap
                    .params
                    .get(&name)
                    .ok_or_else(|| Error::State(format!("snapshot lacks `{name}`")))?;
                param.data_mut().copy_from_slice(src.data());
            }
        }
        Ok(())
    }

    /// Restores every stage and every head present in both model and snapshot.
    pub fn restore_all(&mut self, snap: &ParamSnapshot) -> Result<()> {
        self.check_fingerprint(snap)?;
        for (name, param, _, _) in self.params_mut_flagged() {
            if let Some(src) = snap.params.get(&name) {
                param.data_mut().copy_from_slice(src.data());
            }
        }
        Ok(())
    }

    fn check_fingerprint(&self, snap: &ParamSnapshot) -> Result<()> {
        let fp = self.fingerprint();
        if fp != snap.fingerprint {
            return Err(Error::Compatibility {
                expected: fp,
                found: snap.fingerprint,
            });
        }
        Ok(())
    }

    /// Replaces the top `n` shared stages by per-task copies for `tasks`.
    pub(crate) fn split_top_stages(&mut self, n: usize, tasks: &[String]) -> Result<()> {
        if n > self.stage_count() {
            return Err(Error::config(
                "task_specific.stages",
                format!("{n} exceeds the {} available stages", self.stage_count()),
            ));
        }
        if n > 0 && tasks.is_empty() {
            return Err(Error::config("task_specific.tasks", "at least one task id is needed"));
        }
        let start = self.stage_count() - n;
        for slot in &mut self.slots[start..] {
            let unit = match slot {
                StageSlot::Shared(u) => u.clone(),
                StageSlot::PerTask(_) => {
                    return Err(Error::State("stage is already task-specific".into()));
                }
            };
            *slot = StageSlot::PerTask(tasks.iter().map(|t| (t.clone(), unit.clone())).collect());
        }
        self.velocity.clear();
        Ok(())
    }
}

fn out_shape(cache: &StageCache) -> Vec<usize> {
    match cache {
        StageCache::Dense { y, .. } => y.shape().to_vec(),
        StageCache::Conv { a2, .. } => {
            let s = a2.shape();
            vec![s[0], s[1], s[2] / 2, s[3] / 2]
        }
    }
}

fn accumulate(grads: &mut Grads, name: String, g: Tensor) {
    match grads.get_mut(&name) {
        Some(acc) => acc.axpy(1.0, &g).expect("gradient shapes agree"),
        None => {
            grads.insert(name, g);
        }
    }
}

fn check_targets(targets: &Targets, classes: usize) -> Result<()> {
    match targets {
        Targets::Hard(v) => {
            if let Some(bad) = v.iter().find(|&&y| y >= classes) {
                return Err(Error::Data(format!("label {bad} out of range for {classes} classes")));
            }
        }
        Targets::Soft(t) => {
            if t.cols() != classes {
                return Err(Error::Data(format!("soft targets have {} columns, head has {classes}", t.cols())));
            }
        }
    }
    Ok(())
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Row-wise log-softmax.
pub fn log_softmax(logits: &Tensor) -> Tensor {
    let c = logits.cols();
    let mut out = logits.clone();
    for i in 0..logits.rows() {
        let row = out.row_mut(i);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        row.iter_mut().for_each(|v| *v -= lse);
        debug_assert_eq!(row.len(), c);
    }
    out
}

/// Summed cross-entropy divided by `denom`, with its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Tensor, targets: &Targets, denom: usize) -> Result<(f64, Tensor)> {
    let n = logits.rows();
    let c = logits.cols();
    if targets.len() != n {
        return Err(Error::Data(format!("{} targets for {n} rows", targets.len())));
    }
    let logp = log_softmax(logits);
    let scale = 1.0 / denom as f64;
    let mut loss = 0.0;
    let mut grad = logp.map(f64::exp);
    for i in 0..n {
        match targets {
            Targets::Hard(y) => {
                if y[i] >= c {
                    return Err(Error::Data(format!("label {} out of range for {c} classes", y[i])));
                }
                loss -= logp.get(i, y[i]);
                let g = grad.get(i, y[i]) - 1.0;
                grad.set(i, y[i], g);
            }
            Targets::Soft(t) => {
                for j in 0..c {
                    let tj = t.get(i, j);
                    if tj != 0.0 {
                        loss -= tj * logp.get(i, j);
                    }
                    let g = grad.get(i, j) - tj;
                    grad.set(i, j, g);
                }
            }
        }
    }
    grad.data_mut().iter_mut().for_each(|v| *v *= scale);
    Ok((loss * scale, grad))
}
