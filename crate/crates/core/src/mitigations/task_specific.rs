use crate::error::Result;
use crate::nn::Model;

/// Copy of `model` whose top `n_top` stages are duplicated once per task id.
/// Each branch starts from the current stage values; lower stages stay shared.
pub fn make_task_specific(model: &Model, n_top: usize, tasks: &[String]) -> Result<Model> {
    let mut m = model.clone();
    m.split_top_stages(n_top, tasks)?;
    Ok(m)
}
