use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, TaskPair};
use crate::error::{Error, Result};
use crate::nn::Model;
use crate::probes::cka::stage_cka;
use crate::train::{accuracy, task_heads, true_positive_fractions};

/// `100·(before − after)/before`.
pub fn percent_drop(before: f64, after: f64) -> Result<f64> {
    if before <= 0.0 {
        return Err(Error::Probe("percent drop is undefined for zero starting accuracy".into()));
    }
    Ok(100.0 * (before - after) / before)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskAccuracy {
    pub task: String,
    pub before: f64,
    pub after: f64,
    pub percent_drop: f64,
}

/// Accuracy change of both tasks across task-2 training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForgettingReport {
    pub tasks: Vec<TaskAccuracy>,
    pub class_names: Vec<String>,
    /// Task-1 true-positive fraction per class; `None` where a class has no examples.
    pub tp_before: Vec<Option<f64>>,
    pub tp_after: Vec<Option<f64>>,
    pub stage_cka: Vec<(String, f64)>,
}

/// Compares the task-1 model and the task-2 model on both test splits and on `probe`.
pub fn forgetting_report(
    after_task1: &Model,
    after_task2: &Model,
    pair: &TaskPair,
    probe: &Dataset,
) -> Result<ForgettingReport> {
    let heads = task_heads(pair.head_mode);
    let mut tasks = Vec::with_capacity(2);
    for (i, data) in [&pair.task1.test, &pair.task2.test].into_iter().enumerate() {
        let before = accuracy(after_task1, heads[i], data)?;
        let after = accuracy(after_task2, heads[i], data)?;
        tasks.push(TaskAccuracy {
            task: format!("task{}", i + 1),
            before,
            after,
            percent_drop: if before > 0.0 { percent_drop(before, after)? } else { 0.0 },
        });
    }
    Ok(ForgettingReport {
        tasks,
        class_names: pair.task1.test.class_names().to_vec(),
        tp_before: true_positive_fractions(after_task1, heads[0], &pair.task1.test)?,
        tp_after: true_positive_fractions(after_task2, heads[0], &pair.task1.test)?,
        stage_cka: stage_cka(after_task1, heads[0], after_task2, heads[0], probe)?,
    })
}

impl ForgettingReport {
    /// Per-stage CSV with header `stage,cka`.
    pub fn write_cka_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["stage", "cka"]).map_err(csv_err)?;
        for (s, v) in &self.stage_cka {
            w.write_record([s.clone(), v.to_string()]).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Io {
            path: "<csv>".into(),
            source: e,
        })
    }

    /// One JSON object on one line.
    pub fn to_json_line(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Probe(e.to_string()))
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Probe(format!("csv output failed: {e}"))
}
