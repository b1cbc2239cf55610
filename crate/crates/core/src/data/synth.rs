//! Synthetic stand-ins for the image datasets.
//!
//! Pools are hierarchical Gaussian mixtures: each group (superclass) owns a
//! random low-rank subspace, each class has a mean inside its group's
//! subspace, and each class is a mixture of several modes scattered around
//! that mean. With several modes per class the classes are not linearly
//! separable in input space, so a network has to build features.

use serde::{Deserialize, Serialize};

use crate::data::cifar::{CIFAR100_COARSE, CIFAR100_FINE, CIFAR100_HIERARCHY, CIFAR10_ANIMALS, CIFAR10_CLASSES, CIFAR10_OBJECTS};
use crate::data::dataset::{Dataset, HeadMode, Labels, Split, TaskData, TaskPair};
use crate::error::{Error, Result};
use crate::numeric::{Rng, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthPoolConfig {
    pub dim: usize,
    /// Rank of each group's subspace.
    pub group_rank: usize,
    pub modes_per_class: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Norm scale of the shared group offset.
    pub group_scale: f64,
    pub class_scale: f64,
    pub mode_scale: f64,
    /// Per-coordinate noise standard deviation.
    pub noise: f64,
}

impl Default for SynthPoolConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            group_rank: 12,
            modes_per_class: 4,
            train_per_class: 200,
            test_per_class: 100,
            group_scale: 1.0,
            class_scale: 1.5,
            mode_scale: 2.0,
            noise: 0.6,
        }
    }
}

impl SynthPoolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.group_rank == 0 || self.group_rank > self.dim {
            return Err(Error::config("synthetic.group_rank", "must lie in 1..=dim"));
        }
        if self.modes_per_class == 0 || self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(Error::config("synthetic", "mode and example counts must be positive"));
        }
        for (f, v) in [
            ("synthetic.group_scale", self.group_scale),
            ("synthetic.class_scale", self.class_scale),
            ("synthetic.mode_scale", self.mode_scale),
            ("synthetic.noise", self.noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(f, "must be non-negative and finite"));
            }
        }
        Ok(())
    }
}

/// Group name and its class names.
pub type Hierarchy = Vec<(String, Vec<String>)>;

pub fn cifar10_hierarchy() -> Hierarchy {
    vec![
        ("animal".into(), CIFAR10_ANIMALS.iter().map(|s| s.to_string()).collect()),
        ("object".into(), CIFAR10_OBJECTS.iter().map(|s| s.to_string()).collect()),
    ]
}

pub fn cifar100_hierarchy() -> Hierarchy {
    CIFAR100_COARSE
        .iter()
        .zip(CIFAR100_HIERARCHY.iter())
        .map(|(g, subs)| (g.to_string(), subs.iter().map(|s| s.to_string()).collect()))
        .collect()
}

fn gaussian_vec(n: usize, std: f64, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| std * rng.normal()).collect()
}

/// `basis` (rank × dim) applied to a rank-vector of N(0, scale²/rank) coefficients.
fn in_subspace(basis: &[Vec<f64>], scale: f64, rng: &mut Rng) -> Vec<f64> {
    let dim = basis[0].len();
    let r = basis.len() as f64;
    let mut out = vec![0.0; dim];
    for b in basis {
        let c = scale * rng.normal() / r.sqrt();
        out.iter_mut().zip(b).for_each(|(o, v)| *o += c * v);
    }
    out
}

fn orthonormal_rows(rank: usize, dim: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(rank);
    while rows.len() < rank {
        let mut v = gaussian_vec(dim, 1.0, rng);
        for r in &rows {
            let d: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(r).for_each(|(a, b)| *a -= d * b);
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-8 {
            rows.push(v.into_iter().map(|a| a / n).collect());
        }
    }
    rows
}

/// Draws a labelled pool over `classes` (the class-name order of the output).
/// Returns `(train, test)` with superclass labels attached.
pub fn synth_pool(cfg: &SynthPoolConfig, hierarchy: &Hierarchy, classes: &[String], rng: &Rng) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    let groups: Vec<String> = hierarchy.iter().map(|(g, _)| g.clone()).collect();
    let group_of = |c: &str| hierarchy.iter().position(|(_, cs)| cs.iter().any(|x| x == c));
    let mut structure = rng.derive("structure");
    let bases: Vec<Vec<Vec<f64>>> = (0..hierarchy.len())
        .map(|_| orthonormal_rows(cfg.group_rank, cfg.dim, &mut structure))
        .collect();
    let group_means: Vec<Vec<f64>> = bases
        .iter()
        .map(|b| in_subspace(b, cfg.group_scale, &mut structure))
        .collect();
    let mut modes = Vec::with_capacity(classes.len());
    let mut coarse_of = Vec::with_capacity(classes.len());
    for c in classes {
        let g = group_of(c).ok_or_else(|| Error::config("synthetic.classes", format!("class `{c}` is in no group")))?;
        // each class draws its own structure stream so subsets are stable
        let mut crng = rng.derive("class").derive(c);
        let mut mean = in_subspace(&bases[g], cfg.class_scale, &mut crng);
        mean.iter_mut().zip(&group_means[g]).for_each(|(m, gm)| *m += gm);
        let ms: Vec<Vec<f64>> = (0..cfg.modes_per_class)
            .map(|_| {
                let mut m = in_subspace(&bases[g], cfg.mode_scale, &mut crng);
                m.iter_mut().zip(&mean).for_each(|(a, b)| *a += b);
                m
            })
            .collect();
        modes.push(ms);
        coarse_of.push(g);
    }
    let sample = |split: Split, per_class: usize, scope: &str| -> Result<Dataset> {
        let mut srng = rng.derive(scope);
        let n = per_class * classes.len();
        let mut data = Vec::with_capacity(n * cfg.dim);
        let mut labels = Vec::with_capacity(n);
        let mut coarse = Vec::with_capacity(n);
        for i in 0..per_class {
            for (k, ms) in modes.iter().enumerate() {
                let m = &ms[(i + srng.below(ms.len())) % ms.len()];
                data.extend(m.iter().map(|&v| v + cfg.noise * srng.normal()));
                labels.push(k);
                coarse.push(coarse_of[k]);
            }
        }
        Dataset::new(
            Tensor::from_parts(vec![n, cfg.dim], data),
            vec![cfg.dim],
            Labels::Hard(labels),
            classes.to_vec(),
            split,
        )?
        .with_coarse(coarse, groups.clone())
    };
    Ok((
        sample(Split::Train, cfg.train_per_class, "train")?,
        sample(Split::Test, cfg.test_per_class, "test")?,
    ))
}

/// Ten classes named and grouped like CIFAR-10 (animals and objects).
pub fn synth_cifar10_like(cfg: &SynthPoolConfig, rng: &Rng) -> Result<(Dataset, Dataset)> {
    let classes: Vec<String> = CIFAR10_CLASSES.iter().map(|s| s.to_string()).collect();
    synth_pool(cfg, &cifar10_hierarchy(), &classes, rng)
}

/// A hundred classes grouped into CIFAR-100's twenty superclasses.
pub fn synth_cifar100_like(cfg: &SynthPoolConfig, rng: &Rng) -> Result<(Dataset, Dataset)> {
    let classes: Vec<String> = CIFAR100_FINE.iter().map(|s| s.to_string()).collect();
    synth_pool(cfg, &cifar100_hierarchy(), &classes, rng)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterTaskConfig {
    pub classes: usize,
    pub modes_per_class: usize,
    /// Input dimension; the first half carries task 1, rotations move into the second half.
    pub dim: usize,
    /// 0 keeps task-2 means equal to task 1; 1 moves them into the orthogonal half.
    pub separation: f64,
    pub mode_scale: f64,
    pub noise: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub head_mode: HeadMode,
}

impl Default for ClusterTaskConfig {
    fn default() -> Self {
        Self {
            classes: 2,
            modes_per_class: 2,
            dim: 16,
            separation: 1.0,
            mode_scale: 3.0,
            noise: 0.5,
            train_per_class: 64,
            test_per_class: 64,
            head_mode: HeadMode::SingleHead,
        }
    }
}

/// Two Gaussian-mixture tasks whose means are rotated apart by `separation · π/2`.
pub fn synth_cluster_task(cfg: &ClusterTaskConfig, rng: &Rng) -> Result<TaskPair> {
    if cfg.dim < 2 || cfg.dim % 2 != 0 {
        return Err(Error::config("cluster.dim", "must be an even number ≥ 2"));
    }
    if !(0.0..=1.0).contains(&cfg.separation) {
        return Err(Error::config("cluster.separation", "must lie in [0, 1]"));
    }
    if cfg.classes < 2 || cfg.modes_per_class == 0 || cfg.train_per_class == 0 || cfg.test_per_class == 0 {
        return Err(Error::config("cluster", "need ≥ 2 classes and positive counts"));
    }
    let half = cfg.dim / 2;
    let mut mrng = rng.derive("means");
    let means1: Vec<Vec<Vec<f64>>> = (0..cfg.classes)
        .map(|_| {
            (0..cfg.modes_per_class)
                .map(|_| {
                    let mut m = gaussian_vec(half, cfg.mode_scale / (half as f64).sqrt(), &mut mrng);
                    m.resize(cfg.dim, 0.0);
                    m
                })
                .collect()
        })
        .collect();
    let phi = cfg.separation * std::f64::consts::FRAC_PI_2;
    let (c, s) = (phi.cos(), phi.sin());
    let means2: Vec<Vec<Vec<f64>>> = means1
        .iter()
        .map(|ms| {
            ms.iter()
                .map(|m| {
                    let mut r = vec![0.0; cfg.dim];
                    for i in 0..half {
                        r[i] = c * m[i];
                        r[i + half] = s * m[i];
                    }
                    r
                })
                .collect()
        })
        .collect();
    let names: Vec<String> = (0..cfg.classes).map(|k| format!("class{k}")).collect();
    let sample = |means: &[Vec<Vec<f64>>], per_class: usize, split: Split, scope: &str| -> Result<Dataset> {
        let mut srng = rng.derive(scope);
        let n = per_class * cfg.classes;
        let mut data = Vec::with_capacity(n * cfg.dim);
        let mut labels = Vec::with_capacity(n);
        for i in 0..per_class {
            for (k, ms) in means.iter().enumerate() {
                let m = &ms[i % ms.len()];
                data.extend(m.iter().map(|&v| v + cfg.noise * srng.normal()));
                labels.push(k);
            }
        }
        Dataset::new(
            Tensor::from_parts(vec![n, cfg.dim], data),
            vec![cfg.dim],
            Labels::Hard(labels),
            names.clone(),
            split,
        )
    };
    Ok(TaskPair {
        task1: TaskData {
            train: sample(&means1, cfg.train_per_class, Split::Train, "task1/train")?,
            test: sample(&means1, cfg.test_per_class, Split::Test, "task1/test")?,
        },
        task2: TaskData {
            train: sample(&means2, cfg.train_per_class, Split::Train, "task2/train")?,
            test: sample(&means2, cfg.test_per_class, Split::Test, "task2/test")?,
        },
        head_mode: cfg.head_mode,
        description: format!("gaussian clusters, separation {}", cfg.separation),
    })
}
