use std::collections::{BTreeMap, BTreeSet};

use crate::data::dataset::{Dataset, HeadMode, Labels, TaskData, TaskPair};
use crate::error::{Error, Result};
use crate::numeric::{Rng, Tensor};

/// Keeps the examples of `classes` (by name) and relabels them `0..k` in list order.
pub fn restrict_classes(d: &Dataset, classes: &[String]) -> Result<Dataset> {
    let map: Vec<usize> = classes
        .iter()
        .map(|c| {
            d.class_index(c)
                .ok_or_else(|| Error::config("task.classes", format!("unknown class `{c}`")))
        })
        .collect::<Result<_>>()?;
    let labels = d.hard_labels()?;
    let mut idx = Vec::new();
    let mut relabeled = Vec::new();
    for (i, y) in labels.iter().enumerate() {
        if let Some(k) = map.iter().position(|m| m == y) {
            idx.push(i);
            relabeled.push(k);
        }
    }
    let sub = d.select(&idx);
    let out = Dataset::new(
        sub.inputs().clone(),
        d.input_shape().to_vec(),
        Labels::Hard(relabeled),
        classes.to_vec(),
        d.split(),
    )?;
    match sub.coarse() {
        Some(c) => out.with_coarse(c.to_vec(), d.coarse_names().to_vec()),
        None => Ok(out),
    }
}

fn check_disjoint(a: &[String], b: &[String], field: &str) -> Result<()> {
    let sa: BTreeSet<&String> = a.iter().collect();
    if sa.len() != a.len() {
        return Err(Error::config(field, "duplicate class in list"));
    }
    if let Some(c) = b.iter().find(|c| sa.contains(c)) {
        return Err(Error::config(field, format!("class `{c}` appears in both tasks")));
    }
    Ok(())
}

/// Two disjoint class subsets of one labelled source, one head per task.
pub fn make_split_task(train: &Dataset, test: &Dataset, classes1: &[String], classes2: &[String]) -> Result<TaskPair> {
    if classes1.is_empty() || classes2.is_empty() {
        return Err(Error::config("task.classes", "both tasks need at least one class"));
    }
    check_disjoint(classes1, classes2, "task.classes")?;
    check_disjoint(classes2, &[], "task.classes")?;
    Ok(TaskPair {
        task1: TaskData {
            train: restrict_classes(train, classes1)?,
            test: restrict_classes(test, classes1)?,
        },
        task2: TaskData {
            train: restrict_classes(train, classes2)?,
            test: restrict_classes(test, classes2)?,
        },
        head_mode: HeadMode::MultiHead,
        description: format!("split: [{}] then [{}]", classes1.join(", "), classes2.join(", ")),
    })
}

fn superclass_subset(
    d: &Dataset,
    superclasses: &[String],
    subclasses: &BTreeMap<String, Vec<String>>,
) -> Result<Dataset> {
    let coarse = d
        .coarse()
        .ok_or_else(|| Error::Data("superclass shift needs a source with superclass labels".into()))?;
    let labels = d.hard_labels()?;
    let mut fine_to_super = BTreeMap::new();
    for (k, s) in superclasses.iter().enumerate() {
        let s_idx = d
            .coarse_names()
            .iter()
            .position(|n| n == s)
            .ok_or_else(|| Error::config("task.superclasses", format!("unknown superclass `{s}`")))?;
        let subs = subclasses
            .get(s)
            .filter(|v| !v.is_empty())
            .ok_or_else(|| Error::config("task.subclasses", format!("no subclasses given for `{s}`")))?;
        for sub in subs {
            let f = d
                .class_index(sub)
                .ok_or_else(|| Error::config("task.subclasses", format!("unknown subclass `{sub}`")))?;
            if let Some(i) = labels.iter().position(|&y| y == f) {
                if coarse[i] != s_idx {
                    return Err(Error::config(
                        "task.subclasses",
                        format!("`{sub}` is not a subclass of `{s}`"),
                    ));
                }
            }
            if fine_to_super.insert(f, k).is_some() {
                return Err(Error::config("task.subclasses", format!("`{sub}` listed twice")));
            }
        }
    }
    if let Some(extra) = subclasses.keys().find(|k| !superclasses.contains(k)) {
        return Err(Error::config("task.subclasses", format!("`{extra}` is not a listed superclass")));
    }
    let mut idx = Vec::new();
    let mut relabeled = Vec::new();
    for (i, y) in labels.iter().enumerate() {
        if let Some(&k) = fine_to_super.get(y) {
            idx.push(i);
            relabeled.push(k);
        }
    }
    let sub = d.select(&idx);
    Dataset::new(
        sub.inputs().clone(),
        d.input_shape().to_vec(),
        Labels::Hard(relabeled),
        superclasses.to_vec(),
        d.split(),
    )
}

/// Single-head task over `superclasses` whose inputs come from different subclasses per task.
pub fn make_superclass_shift_task(
    train: &Dataset,
    test: &Dataset,
    superclasses: &[String],
    subclasses1: &BTreeMap<String, Vec<String>>,
    subclasses2: &BTreeMap<String, Vec<String>>,
) -> Result<TaskPair> {
    if superclasses.is_empty() {
        return Err(Error::config("task.superclasses", "at least one superclass is needed"));
    }
    Ok(TaskPair {
        task1: TaskData {
            train: superclass_subset(train, superclasses, subclasses1)?,
            test: superclass_subset(test, superclasses, subclasses1)?,
        },
        task2: TaskData {
            train: superclass_subset(train, superclasses, subclasses2)?,
            test: superclass_subset(test, superclasses, subclasses2)?,
        },
        head_mode: HeadMode::SingleHead,
        description: format!("superclass shift over [{}]", superclasses.join(", ")),
    })
}

/// Appends every `pool` example under one extra `other` label.
pub fn add_other_category(task1: &Dataset, pool: &Dataset) -> Result<Dataset> {
    if task1.input_shape() != pool.input_shape() {
        return Err(Error::Dimension {
            op: "add_other_category",
            left: task1.input_shape().to_vec(),
            right: pool.input_shape().to_vec(),
        });
    }
    check_disjoint(task1.class_names(), pool.class_names(), "other.classes")?;
    let labels = task1.hard_labels()?;
    let other = task1.n_classes();
    let mut names = task1.class_names().to_vec();
    names.push("other".into());
    let mut all = labels.to_vec();
    all.extend(std::iter::repeat_n(other, pool.len()));
    let inputs = Tensor::concat_rows(&[task1.inputs(), pool.inputs()])?;
    Dataset::new(inputs, task1.input_shape().to_vec(), Labels::Hard(all), names, task1.split())
}

/// Mixes `d1` with a seeded random pairing of `d2`.
pub fn mixup_interpolate(d1: &Dataset, d2: &Dataset, lambda: f64, rng: &mut Rng) -> Result<Dataset> {
    if d2.is_empty() {
        return Err(Error::Data("mixup needs a non-empty second dataset".into()));
    }
    let perm = rng.permutation(d2.len());
    let pairing: Vec<usize> = (0..d1.len()).map(|i| perm[i % perm.len()]).collect();
    mixup_with_pairing(d1, d2, lambda, &pairing)
}

/// `λ·x₂ + (1−λ)·x₁` with soft labels mixed alike; row `i` of `d1` meets row `pairing[i]` of `d2`.
pub fn mixup_with_pairing(d1: &Dataset, d2: &Dataset, lambda: f64, pairing: &[usize]) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::config("mixup.lambda", "must lie in [0, 1]"));
    }
    if d1.input_shape() != d2.input_shape() {
        return Err(Error::Dimension {
            op: "mixup",
            left: d1.input_shape().to_vec(),
            right: d2.input_shape().to_vec(),
        });
    }
    if d1.n_classes() != d2.n_classes() {
        return Err(Error::Data(format!(
            "mixup needs a shared label space ({} vs {} classes)",
            d1.n_classes(),
            d2.n_classes()
        )));
    }
    if pairing.len() != d1.len() || pairing.iter().any(|&j| j >= d2.len()) {
        return Err(Error::Data("pairing does not index the second dataset".into()));
    }
    let x2 = d2.inputs().select_rows(pairing);
    let y2 = d2.soft_labels().select_rows(pairing);
    let mix = |a: &Tensor, b: &Tensor| {
        let mut out = a.clone();
        for (o, &v) in out.data_mut().iter_mut().zip(b.data()) {
            *o = lambda * v + (1.0 - lambda) * *o;
        }
        out
    };
    let x = mix(d1.inputs(), &x2);
    let mut y = mix(&d1.soft_labels(), &y2);
    // renormalize to absorb rounding so rows stay exact distributions
    for i in 0..y.rows() {
        let s: f64 = y.row(i).iter().sum();
        y.row_mut(i).iter_mut().for_each(|v| *v /= s);
    }
    Dataset::new(x, d1.input_shape().to_vec(), Labels::Soft(y), d1.class_names().to_vec(), d1.split())
}
