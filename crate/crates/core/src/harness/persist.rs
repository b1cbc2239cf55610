//! Model files: a tensor container whose label is a JSON description of the layout.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ArchSpec, Model, ParamSnapshot, StageSlot};
use crate::numeric::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelMeta {
    name: String,
    arch: ArchSpec,
    /// Head ids with their class counts, in attachment order.
    heads: Vec<(String, usize)>,
    /// Number of top stages that are task-specific, and the task ids they branch on.
    task_specific: usize,
    tasks: Vec<String>,
}

fn task_specific_layout(model: &Model) -> (usize, Vec<String>) {
    let mut n = 0;
    let mut tasks = Vec::new();
    for slot in model.slots().iter().rev() {
        match slot {
            StageSlot::PerTask(m) => {
                n += 1;
                tasks = m.keys().cloned().collect();
            }
            StageSlot::Shared(_) => break,
        }
    }
    (n, tasks)
}

pub fn save_model(model: &Model, name: &str, path: &Path) -> Result<()> {
    let (task_specific, tasks) = task_specific_layout(model);
    let meta = ModelMeta {
        name: name.to_string(),
        arch: model.spec().clone(),
        heads: model
            .head_ids()
            .into_iter()
            .map(|h| {
                let c = model.head_classes(&h).unwrap_or(0);
                (h, c)
            })
            .collect(),
        task_specific,
        tasks,
    };
    let label = serde_json::to_string(&meta).map_err(|e| Error::State(e.to_string()))?;
    model.snapshot(&label).save(path)
}

/// Rebuilds the layout described in the file and loads every parameter.
pub fn load_model(path: &Path) -> Result<Model> {
    let snap = ParamSnapshot::load(path)?;
    let meta: ModelMeta = serde_json::from_str(&snap.label).map_err(|e| Error::Format {
        offset: 0,
        reason: format!("model label is not a layout description: {e}"),
    })?;
    // placeholder initialization, overwritten by the restore below
    let mut rng = Rng::new(0);
    let mut model = Model::build(&meta.arch, &mut rng)?;
    for (h, c) in &meta.heads {
        model.attach_head(h, *c, &mut rng)?;
    }
    model.split_top_stages(meta.task_specific, &meta.tasks)?;
    model.restore_all(&snap)?;
    if model.named_params().len() != snap.params.len() {
        return Err(Error::State(format!("{} does not match its layout description", path.display())));
    }
    Ok(model)
}
