use crate::data::Dataset;
use crate::error::Result;
use crate::nn::{Model, OptimizerConfig, ParamOwner};
use crate::numeric::Rng;
use crate::train::{fit, Curves, EvalSet};

/// Trains only `head` for `head_epochs`, with every stage frozen, then
/// restores the previous stage flags. With zero epochs nothing is touched.
#[allow(clippy::too_many_arguments)]
pub fn headfirst_train(
    model: &mut Model,
    head: &str,
    data: &Dataset,
    head_epochs: usize,
    opt: &OptimizerConfig,
    shuffle: &mut Rng,
    evals: &[EvalSet<'_>],
    curves: &mut Curves,
) -> Result<()> {
    if head_epochs == 0 {
        return Ok(());
    }
    let flags: Vec<bool> = (0..model.stage_count()).map(|i| model.stage_trainable(i)).collect();
    let heads = model.head_ids();
    let head_flags: Vec<bool> = heads.iter().map(|h| model.head(h).is_some() && model.is_trainable(&format!("head[{h}].w"))).collect();
    model.set_trainability(|o| matches!(o, ParamOwner::Head(h) if h == head));
    let out = fit(model, head, data, head_epochs, opt, None, None, shuffle, evals, curves);
    model.set_trainability(|o| match o {
        ParamOwner::Stage(i) => flags[i],
        ParamOwner::Head(h) => heads.iter().position(|x| x == h).is_some_and(|k| head_flags[k]),
    });
    out.map(|_| ())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_cluster_task, ClusterTaskConfig};
    use crate::nn::ArchSpec;

    #[test]
    fn body_is_untouched_during_head_phase() {
        let t = synth_cluster_task(&ClusterTaskConfig::default(), &Rng::new(1)).unwrap();
        let mut m = Model::build(&ArchSpec::mlp(16, &[8, 8]), &mut Rng::new(2)).unwrap();
        m.attach_head("t2", 2, &mut Rng::new(3)).unwrap();
        let before = m.snapshot("b");
        let opt = OptimizerConfig {
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 16,
        };
        headfirst_train(&mut m, "t2", &t.task2.train, 2, &opt, &mut Rng::new(4), &[], &mut Curves::new()).unwrap();
        let after = m.snapshot("a");
        for (n, p) in &before.params {
            assert_eq!(n.starts_with("head["), after.params[n] != *p, "{n}");
        }
        assert!(m.stage_trainable(0) && m.stage_trainable(1));
    }
}
