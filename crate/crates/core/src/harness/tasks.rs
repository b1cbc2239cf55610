//! Datasets and task pairs for each experiment kind.

use std::collections::BTreeSet;
use std::path::PathBuf;

use crate::data::{
    add_other_category, load_cifar100_dir, load_cifar10_dir, make_split_task, make_superclass_shift_task,
    mixup_interpolate, restrict_classes, synth_cifar100_like, synth_cifar10_like, synth_cluster_task, Dataset,
    HeadMode, Standardizer, TaskData, TaskPair, DATA_ROOT_ENV,
};
use crate::error::{Error, Result};
use crate::harness::config::{DataConfig, DataSource, ExperimentConfig, TaskSpec};
use crate::numeric::Rng;

/// Train and test pools every task is carved from.
#[derive(Clone, Debug)]
pub struct Pool {
    pub train: Dataset,
    pub test: Dataset,
}

/// Directory holding the real datasets: the config's `root`, else the environment.
pub fn data_root(cfg: &DataConfig) -> Result<PathBuf> {
    if let Some(r) = &cfg.root {
        return Ok(r.clone());
    }
    std::env::var_os(DATA_ROOT_ENV)
        .map(PathBuf::from)
        .ok_or_else(|| Error::config("data.root", format!("set `data.root` or the {DATA_ROOT_ENV} environment variable")))
}

fn cap_per_class(d: &Dataset, cap: Option<usize>) -> Result<Dataset> {
    let Some(cap) = cap else { return Ok(d.clone()) };
    let labels = d.hard_labels()?;
    let mut seen = vec![0usize; d.n_classes()];
    let idx: Vec<usize> = (0..d.len())
        .filter(|&i| {
            seen[labels[i]] += 1;
            seen[labels[i]] <= cap
        })
        .collect();
    Ok(d.select(&idx))
}

/// Loads (or synthesizes, from `rng`) the pool. `hundred` selects the CIFAR-100 layout.
pub fn load_pool(cfg: &DataConfig, hundred: bool, rng: &Rng) -> Result<Pool> {
    let (train, test) = match (cfg.source, hundred) {
        (DataSource::Synthetic, false) => synth_cifar10_like(&cfg.synthetic, rng)?,
        (DataSource::Synthetic, true) => synth_cifar100_like(&cfg.synthetic, rng)?,
        (DataSource::Cifar10, false) => load_cifar10_dir(&data_root(cfg)?)?,
        (DataSource::Cifar100, true) => load_cifar100_dir(&data_root(cfg)?)?,
        (source, _) => {
            return Err(Error::config(
                "data.source",
                format!("{source:?} does not provide the classes this experiment needs"),
            ))
        }
    };
    Ok(Pool {
        train: cap_per_class(&train, cfg.max_train_per_class)?,
        test: cap_per_class(&test, cfg.max_test_per_class)?,
    })
}

fn standardize(pair: TaskPair, on: bool) -> Result<TaskPair> {
    if on {
        pair.standardized()
    } else {
        Ok(pair)
    }
}

/// The pair described by the `[task]` section.
pub fn main_pair(cfg: &ExperimentConfig, pool: Option<&Pool>, rng: &Rng) -> Result<TaskPair> {
    let need = || pool.ok_or_else(|| Error::State("task needs a data pool".into()));
    let pair = match &cfg.task {
        TaskSpec::Split { classes1, classes2 } => {
            let p = need()?;
            make_split_task(&p.train, &p.test, classes1, classes2)?
        }
        TaskSpec::SuperclassShift {
            superclasses,
            subclasses1,
            subclasses2,
        } => {
            let p = need()?;
            make_superclass_shift_task(&p.train, &p.test, superclasses, subclasses1, subclasses2)?
        }
        TaskSpec::Cluster(c) => synth_cluster_task(c, rng)?,
    };
    standardize(pair, cfg.data.standardize)
}

/// Whether the `[task]` section needs the CIFAR-100 layout.
pub fn needs_hundred(cfg: &ExperimentConfig) -> bool {
    matches!(cfg.task, TaskSpec::SuperclassShift { .. })
}

/// One split pair per second-task arm, all sharing the same task 1.
pub fn semantic_pairs(cfg: &ExperimentConfig, pool: &Pool) -> Result<Vec<(String, TaskPair)>> {
    cfg.semantics
        .second
        .iter()
        .map(|(name, classes2)| {
            let pair = make_split_task(&pool.train, &pool.test, &cfg.semantics.task1, classes2)?;
            Ok((name.clone(), standardize(pair, cfg.data.standardize)?))
        })
        .collect()
}

fn complement(pool: &Dataset, exclude: &[&[String]]) -> Vec<String> {
    let ex: BTreeSet<&String> = exclude.iter().flat_map(|v| v.iter()).collect();
    pool.class_names().iter().filter(|c| !ex.contains(c)).cloned().collect()
}

fn with_empty_other(d: &Dataset) -> Result<Dataset> {
    let empty = Dataset::empty(d.input_shape().to_vec(), Vec::new(), d.split());
    add_other_category(d, &empty)
}

/// Task 1 extended by an `other` class made of every pool class outside both tasks.
/// Test accuracy is measured on the original task-1 classes only.
pub fn other_category_pair(cfg: &ExperimentConfig, pool: &Pool, classes2: &[String], head_mode: HeadMode) -> Result<TaskPair> {
    let t1 = &cfg.semantics.task1;
    let rest = complement(&pool.train, &[t1, classes2]);
    let train1 = restrict_classes(&pool.train, t1)?;
    let test1 = restrict_classes(&pool.test, t1)?;
    let other_train = restrict_classes(&pool.train, &rest)?;
    let mut train2 = restrict_classes(&pool.train, classes2)?;
    let mut test2 = restrict_classes(&pool.test, classes2)?;
    if head_mode == HeadMode::SingleHead {
        train2 = with_empty_other(&train2)?;
        test2 = with_empty_other(&test2)?;
    }
    let pair = TaskPair {
        task1: TaskData {
            train: add_other_category(&train1, &other_train)?,
            test: with_empty_other(&test1)?,
        },
        task2: TaskData {
            train: train2,
            test: test2,
        },
        head_mode,
        description: format!("[{}] + other, then [{}]", t1.join(", "), classes2.join(", ")),
    };
    standardize(pair, cfg.data.standardize)
}

/// Mixup arms: task 1 with an `other` class, task 2 the `λ`-mixture of task-1
/// training data (without `other`) and the second task, in one shared head.
pub fn mixup_pairs(cfg: &ExperimentConfig, pool: &Pool, classes2: &[String], pairing: &Rng) -> Result<Vec<(f64, TaskPair)>> {
    let base = other_category_pair(
        &ExperimentConfig {
            data: DataConfig {
                standardize: false,
                ..cfg.data.clone()
            },
            ..cfg.clone()
        },
        pool,
        classes2,
        HeadMode::SingleHead,
    )?;
    let scaler = if cfg.data.standardize {
        Some(Standardizer::fit(&base.task1.train)?)
    } else {
        None
    };
    let apply = |d: &Dataset| -> Result<Dataset> {
        match &scaler {
            Some(s) => s.apply(d),
            None => Ok(d.clone()),
        }
    };
    let train1 = apply(&base.task1.train)?;
    let test1 = apply(&base.task1.test)?;
    let plain1 = apply(&with_empty_other(&restrict_classes(&pool.train, &cfg.semantics.task1)?)?)?;
    let train2 = apply(&base.task2.train)?;
    let test2 = apply(&base.task2.test)?;
    cfg.semantics
        .lambdas
        .iter()
        .map(|&lambda| {
            // every λ sees the same pairing
            let mixed = mixup_interpolate(&plain1, &train2, lambda, &mut pairing.clone())?;
            Ok((
                lambda,
                TaskPair {
                    task1: TaskData {
                        train: train1.clone(),
                        test: test1.clone(),
                    },
                    task2: TaskData {
                        train: mixed,
                        test: test2.clone(),
                    },
                    head_mode: HeadMode::SingleHead,
                    description: format!("mixup λ = {lambda}"),
                },
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SynthPoolConfig;
    use crate::harness::config::ExperimentKind;

    fn small_pool() -> Pool {
        let cfg = DataConfig {
            synthetic: SynthPoolConfig {
                train_per_class: 6,
                test_per_class: 4,
                ..SynthPoolConfig::default()
            },
            ..DataConfig::default()
        };
        load_pool(&cfg, false, &Rng::new(1)).unwrap()
    }

    #[test]
    fn other_category_counts() {
        let pool = small_pool();
        let cfg = ExperimentConfig::new(ExperimentKind::OtherCategory, vec![0], "o");
        let classes2 = cfg.semantics.second["objects"].clone();
        let pair = other_category_pair(&cfg, &pool, &classes2, HeadMode::MultiHead).unwrap();
        // 2 task classes plus 6 pool classes outside both tasks
        assert_eq!(pair.task1.train.len(), 2 * 6 + 6 * 6);
        assert_eq!(pair.task1.train.n_classes(), 3);
        assert_eq!(pair.task1.test.len(), 2 * 4);
        assert_eq!(pair.task2.train.n_classes(), 2);
    }

    #[test]
    fn mixup_endpoints() {
        let pool = small_pool();
        let mut cfg = ExperimentConfig::new(ExperimentKind::MixupSweep, vec![0], "o");
        cfg.data.standardize = false;
        let classes2 = cfg.semantics.second["objects"].clone();
        let pairs = mixup_pairs(&cfg, &pool, &classes2, &Rng::new(2)).unwrap();
        assert_eq!(pairs.len(), 5);
        let t1 = restrict_classes(&pool.train, &cfg.semantics.task1).unwrap();
        assert_eq!(pairs[0].1.task2.train.inputs(), t1.inputs());
        assert_eq!(pairs[0].1.task2.train.n_classes(), 3);
        assert_eq!(pairs[4].1.task2.train.len(), t1.len());
    }

    #[test]
    fn cifar_source_without_root_is_config_error() {
        let cfg = DataConfig {
            source: DataSource::Cifar10,
            root: Some(PathBuf::from("/nonexistent/forgetting-data")),
            ..DataConfig::default()
        };
        assert!(load_pool(&cfg, false, &Rng::new(0)).is_err());
        assert!(load_pool(&DataConfig::default().clone(), true, &Rng::new(0)).is_ok());
    }
}
