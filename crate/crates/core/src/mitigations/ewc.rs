use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{BatchGroup, GradScope, Grads, Model, Penalty, Targets};
use crate::numeric::{Rng, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FisherLabels {
    /// Gradients of the log-likelihood of the true labels.
    #[default]
    Empirical,
    /// Labels drawn from the model's own predictive distribution.
    Sampled,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamScope {
    /// Stage parameters only (heads excluded).
    Body,
    All,
}

fn in_scope(name: &str, scope: ParamScope) -> bool {
    scope == ParamScope::All || !name.starts_with("head[")
}

/// Diagonal Fisher estimate: mean over examples of the squared per-example
/// log-likelihood gradient. Uses `n_samples` examples drawn without
/// replacement, or the whole set when it is smaller.
pub fn estimate_fisher_diag(
    model: &Model,
    head: &str,
    data: &Dataset,
    n_samples: usize,
    labels: FisherLabels,
    scope: ParamScope,
    rng: &mut Rng,
) -> Result<Grads> {
    if data.is_empty() || n_samples == 0 {
        return Err(Error::config("ewc.fisher_samples", "Fisher estimate needs at least one example"));
    }
    let idx = if n_samples >= data.len() {
        (0..data.len()).collect()
    } else {
        rng.sample_without_replacement(data.len(), n_samples)
    };
    let targets = data.targets();
    let mut fisher: Grads = model
        .named_params()
        .into_iter()
        .filter(|(n, _)| in_scope(n, scope))
        .map(|(n, t)| (n, Tensor::zeros(t.shape())))
        .collect();
    for &i in &idx {
        let x = data.inputs().select_rows(&[i]);
        let y = match labels {
            FisherLabels::Empirical => targets.select(&[i]),
            FisherLabels::Sampled => {
                let (logits, _) = model.forward_with_head(head, &x, &[])?;
                let p = crate::nn::log_softmax(&logits).map(f64::exp);
                Targets::Hard(vec![rng.categorical(p.row(0))])
            }
        };
        let group = BatchGroup { head, inputs: x, targets: y };
        let (_, grads) = model.loss_and_grads(&[group], None, GradScope::All)?;
        for (name, acc) in fisher.iter_mut() {
            if let Some(g) = grads.get(name) {
                acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, v)| *a += v * v);
            }
        }
    }
    let inv = 1.0 / idx.len() as f64;
    fisher.values_mut().for_each(|t| t.data_mut().iter_mut().for_each(|v| *v *= inv));
    Ok(fisher)
}

/// Quadratic anchor `(λ/2) Σ F (θ − θ*)²` around the parameters at construction time.
#[derive(Clone, Debug, PartialEq)]
pub struct EwcState {
    pub anchor: BTreeMap<String, Tensor>,
    pub fisher: Grads,
    pub lambda: f64,
    pub samples: usize,
}

impl EwcState {
    pub fn new(model: &Model, fisher: Grads, lambda: f64, samples: usize) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::config("ewc.lambda", "must be non-negative and finite"));
        }
        let mut anchor = BTreeMap::new();
        for (name, f) in &fisher {
            let p = model
                .param(name)
                .ok_or_else(|| Error::State(format!("Fisher entry `{name}` has no parameter")))?;
            if p.shape() != f.shape() {
                return Err(Error::Dimension {
                    op: "ewc",
                    left: p.shape().to_vec(),
                    right: f.shape().to_vec(),
                });
            }
            anchor.insert(name.clone(), p.clone());
        }
        Ok(Self {
            anchor,
            fisher,
            lambda,
            samples,
        })
    }

    /// The penalty to hand to the trainer; `None` at zero strength so training matches the baseline exactly.
    pub fn as_penalty(&self) -> Option<&dyn Penalty> {
        (self.lambda > 0.0).then_some(self as &dyn Penalty)
    }

    fn each<'a>(&'a self, model: &'a Model) -> Result<Vec<(&'a str, &'a Tensor, &'a Tensor, &'a Tensor)>> {
        self.fisher
            .iter()
            .map(|(name, f)| {
                let p = model
                    .param(name)
                    .ok_or_else(|| Error::State(format!("model lacks anchored parameter `{name}`")))?;
                if p.shape() != f.shape() {
                    return Err(Error::Dimension {
                        op: "ewc",
                        left: p.shape().to_vec(),
                        right: f.shape().to_vec(),
                    });
                }
                Ok((name.as_str(), p, f, &self.anchor[name]))
            })
            .collect()
    }
}

impl Penalty for EwcState {
    fn value(&self, model: &Model) -> Result<f64> {
        let mut s = 0.0;
        for (_, p, f, a) in self.each(model)? {
            for ((&p, &f), &a) in p.data().iter().zip(f.data()).zip(a.data()) {
                s += f * (p - a) * (p - a);
            }
        }
        Ok(0.5 * self.lambda * s)
    }

    fn add_grad(&self, model: &Model, grads: &mut Grads) -> Result<()> {
        for (name, p, f, a) in self.each(model)? {
            let g = grads
                .entry(name.to_string())
                .or_insert_with(|| Tensor::zeros(p.shape()));
            for (((g, &p), &f), &a) in g.data_mut().iter_mut().zip(p.data()).zip(f.data()).zip(a.data()) {
                *g += self.lambda * f * (p - a);
            }
        }
        Ok(())
    }
}

/// `(λ/2) Σ F (θ − θ*)²` for standalone use.
pub fn ewc_penalty(model: &Model, state: &EwcState) -> Result<f64> {
    state.value(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Labels, Split};
    use crate::nn::{ArchSpec, Dense, Stage};
    use crate::numeric::finite_diff_grad;

    fn tiny_model() -> Model {
        let mut m = Model::build(&ArchSpec::mlp(3, &[4, 4]), &mut Rng::new(1)).unwrap();
        m.attach_head("h", 2, &mut Rng::new(2)).unwrap();
        m
    }

    #[test]
    fn hand_evaluated_penalty() {
        let mut m = tiny_model();
        let name = "stage1.b".to_string();
        let mut fisher = Grads::new();
        let mut f = Tensor::zeros(&[4]);
        f.data_mut()[0] = 2.0;
        fisher.insert(name.clone(), f);
        let state = EwcState::new(&m, fisher, 4.0, 1).unwrap();
        assert_eq!(ewc_penalty(&m, &state).unwrap(), 0.0);
        let mut b = m.param(&name).unwrap().clone();
        b.data_mut()[0] += 3.0;
        m.set_param(&name, &b).unwrap();
        assert!((ewc_penalty(&m, &state).unwrap() - 36.0).abs() < 1e-12);
        let mut g = Grads::new();
        state.add_grad(&m, &mut g).unwrap();
        assert!((g[&name].data()[0] - 24.0).abs() < 1e-12);
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        let mut m = tiny_model();
        let mut rng = Rng::new(9);
        let fisher: Grads = m
            .named_params()
            .into_iter()
            .filter(|(n, _)| !n.starts_with("head["))
            .map(|(n, t)| {
                let v = (0..t.len()).map(|_| rng.uniform()).collect();
                (n, Tensor::new(t.shape().to_vec(), v).unwrap())
            })
            .collect();
        let state = EwcState::new(&m, fisher, 3.0, 1).unwrap();
        for (n, t) in m.clone().named_params() {
            let moved = t.map(|v| v + 0.1);
            m.set_param(&n, &moved).unwrap();
        }
        let mut g = Grads::new();
        state.add_grad(&m, &mut g).unwrap();
        for (name, t) in m.named_params().into_iter().filter(|(n, _)| !n.starts_with("head[")) {
            let num = finite_diff_grad(
                |p| {
                    let mut mm = m.clone();
                    mm.set_param(&name, p).unwrap();
                    ewc_penalty(&mm, &state).unwrap()
                },
                t,
                1e-5,
            )
            .unwrap();
            let err = g[&name].sub(&num).unwrap().max_abs();
            assert!(err < 1e-6, "{name}: {err}");
        }
    }

    #[test]
    fn fisher_of_one_parameter_logistic_model() {
        // logits (w·x, 0): ∂log p(y|x)/∂w = x·(1[y=0] − σ(w·x))
        let w = Tensor::new(vec![1, 2], vec![0.5, 0.0]).unwrap();
        let stages = vec![
            Stage::Dense(Dense::new(Tensor::eye(1), Tensor::zeros(&[1]))),
            Stage::Dense(Dense::new(Tensor::eye(1), Tensor::zeros(&[1]))),
        ];
        let mut m = Model::from_stages(ArchSpec::mlp(1, &[1, 1]), stages).unwrap();
        m.attach_head_with("h", Dense::new(w, Tensor::zeros(&[2]))).unwrap();
        let x = Tensor::new(vec![2, 1], vec![1.0, 2.0]).unwrap();
        let d = Dataset::new(x, vec![1], Labels::Hard(vec![0, 1]), vec!["a".into(), "b".into()], Split::Train)
            .unwrap();
        let f = estimate_fisher_diag(&m, "h", &d, 200, FisherLabels::Empirical, ParamScope::All, &mut Rng::new(0))
            .unwrap();
        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let g1 = 1.0 * (1.0 - sig(0.5));
        let g2 = 2.0 * (0.0 - sig(1.0));
        let want = 0.5 * (g1 * g1 + g2 * g2);
        assert!((f["head[h].w"].data()[0] - want).abs() < 1e-12);
    }

    #[test]
    fn fisher_properties() {
        let m = tiny_model();
        let mut rng = Rng::new(3);
        let x = Tensor::new(vec![6, 3], (0..18).map(|_| rng.normal()).collect()).unwrap();
        let d = Dataset::new(x, vec![3], Labels::Hard(vec![0, 1, 0, 1, 1, 0]), vec!["a".into(), "b".into()], Split::Train)
            .unwrap();
        let f1 = estimate_fisher_diag(&m, "h", &d, 200, FisherLabels::Empirical, ParamScope::Body, &mut Rng::new(0))
            .unwrap();
        assert!(f1.keys().all(|k| !k.starts_with("head[")));
        assert!(f1.values().all(|t| t.data().iter().all(|&v| v >= 0.0)));
        let dd = crate::data::concat(&[&d, &d]).unwrap();
        let f2 = estimate_fisher_diag(&m, "h", &dd, 200, FisherLabels::Empirical, ParamScope::Body, &mut Rng::new(0))
            .unwrap();
        for (k, t) in &f1 {
            let err = t.sub(&f2[k]).unwrap().max_abs();
            assert!(err <= 1e-15 * (1.0 + t.max_abs()), "{k}: {err}");
        }
        assert!(estimate_fisher_diag(&m, "h", &d.select(&[]), 10, FisherLabels::Empirical, ParamScope::Body, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn dead_parameter_has_zero_fisher() {
        // a stage-2 unit whose incoming weights and bias are zero never activates
        let mut m = tiny_model();
        let mut w = m.param("stage2.w").unwrap().clone();
        for r in 0..4 {
            w.set(r, 0, 0.0);
        }
        m.set_param("stage2.w", &w).unwrap();
        let mut b = m.param("stage2.b").unwrap().clone();
        b.data_mut()[0] = -1.0;
        m.set_param("stage2.b", &b).unwrap();
        let mut rng = Rng::new(3);
        let x = Tensor::new(vec![4, 3], (0..12).map(|_| rng.normal()).collect()).unwrap();
        let d = Dataset::new(x, vec![3], Labels::Hard(vec![0, 1, 0, 1]), vec!["a".into(), "b".into()], Split::Train)
            .unwrap();
        let f = estimate_fisher_diag(&m, "h", &d, 200, FisherLabels::Sampled, ParamScope::Body, &mut Rng::new(0))
            .unwrap();
        assert_eq!(f["stage2.b"].data()[0], 0.0);
    }
}
