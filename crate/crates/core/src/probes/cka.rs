use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{stage_name, Model};
use crate::numeric::Tensor;

/// Largest probe set taken from the task-1 test split.
pub const PROBE_CAP: usize = 1024;

/// Activations of one stage on an ordered probe set.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationMatrix {
    pub stage: String,
    pub matrix: Tensor,
    /// Fingerprint of the probe set the rows come from.
    pub fingerprint: u64,
}

/// The first `PROBE_CAP` examples of `test`, in stored order.
pub fn probe_set(test: &Dataset) -> Dataset {
    test.head(PROBE_CAP)
}

/// Flattened activations of `stages` along the route of `head`.
pub fn record_stage_activations(
    model: &Model,
    head: &str,
    probe: &Dataset,
    stages: &[usize],
) -> Result<Vec<ActivationMatrix>> {
    if let Some(&bad) = stages.iter().find(|&&s| s >= model.stage_count()) {
        return Err(Error::Probe(format!("unknown stage index {bad}")));
    }
    let route = model.head(head).map(|_| head);
    let all = model.stage_activations(route, probe.inputs())?;
    let fingerprint = probe.fingerprint();
    Ok(stages
        .iter()
        .map(|&s| ActivationMatrix {
            stage: stage_name(s),
            matrix: all[s].clone(),
            fingerprint,
        })
        .collect())
}

fn centered(x: &Tensor) -> Tensor {
    let (m, n) = (x.rows(), x.cols());
    let mut mean = vec![0.0; n];
    for i in 0..m {
        for (a, v) in mean.iter_mut().zip(x.row(i)) {
            *a += v;
        }
    }
    mean.iter_mut().for_each(|a| *a /= m as f64);
    let mut out = x.clone();
    for i in 0..m {
        for (v, a) in out.row_mut(i).iter_mut().zip(&mean) {
            *v -= a;
        }
    }
    out
}

fn gram_t(a: &Tensor, b: &Tensor) -> Tensor {
    // aᵀb
    a.transpose().and_then(|t| t.matmul(b)).expect("row counts agree")
}

fn gram(a: &Tensor) -> Tensor {
    // aaᵀ
    a.matmul(&a.transpose().expect("2-D")).expect("shapes agree")
}

/// Linear CKA of column-centered `x` and `y`: `‖XᵀY‖² / (‖XᵀX‖·‖YᵀY‖)`, clamped to `[0, 1]`.
pub fn linear_cka(x: &ActivationMatrix, y: &ActivationMatrix) -> Result<f64> {
    if x.fingerprint != y.fingerprint {
        return Err(Error::Probe(format!(
            "activations of {} and {} come from different probe sets",
            x.stage, y.stage
        )));
    }
    cka_matrices(&x.matrix, &y.matrix)
}

/// [`linear_cka`] on raw matrices whose rows are known to align.
pub fn cka_matrices(x: &Tensor, y: &Tensor) -> Result<f64> {
    let m = x.rows();
    if y.rows() != m {
        return Err(Error::Dimension {
            op: "linear_cka",
            left: x.shape().to_vec(),
            right: y.shape().to_vec(),
        });
    }
    let xc = centered(x);
    let yc = centered(y);
    if xc.max_abs() == 0.0 || yc.max_abs() == 0.0 {
        return Err(Error::Probe("similarity is undefined for a constant activation matrix".into()));
    }
    let (nx, ny) = (x.cols(), y.cols());
    let feature_cost = nx * ny + nx * nx + ny * ny;
    let example_cost = m * (nx + ny);
    let (num, dx, dy) = if feature_cost <= example_cost {
        let xy = gram_t(&xc, &yc).frobenius_norm();
        (xy * xy, gram_t(&xc, &xc).frobenius_norm(), gram_t(&yc, &yc).frobenius_norm())
    } else {
        // ‖XᵀY‖² = ⟨XXᵀ, YYᵀ⟩ and ‖XᵀX‖ = ‖XXᵀ‖
        let kx = gram(&xc);
        let ky = gram(&yc);
        (kx.dot(&ky)?, kx.frobenius_norm(), ky.frobenius_norm())
    };
    let v = num / (dx * dy);
    if !v.is_finite() {
        return Err(Error::Numeric("non-finite CKA".into()));
    }
    Ok(v.clamp(0.0, 1.0))
}

/// CKA per stage between two models' activations on the same probe set.
pub fn stage_cka(
    before: &Model,
    before_head: &str,
    after: &Model,
    after_head: &str,
    probe: &Dataset,
) -> Result<Vec<(String, f64)>> {
    let stages: Vec<usize> = (0..before.stage_count()).collect();
    let a = record_stage_activations(before, before_head, probe, &stages)?;
    let b = record_stage_activations(after, after_head, probe, &stages)?;
    a.iter()
        .zip(&b)
        .map(|(x, y)| Ok((x.stage.clone(), linear_cka(x, y)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{svd, Rng};
    use proptest::prelude::*;

    fn act(m: Tensor) -> ActivationMatrix {
        ActivationMatrix {
            stage: "s".into(),
            matrix: m,
            fingerprint: 7,
        }
    }

    fn random(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut r = Rng::new(seed);
        Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| r.normal()).collect()).unwrap()
    }

    fn orthogonal(n: usize, seed: u64) -> Tensor {
        svd(&random(n, n, seed)).unwrap().u
    }

    #[test]
    fn hand_example_is_zero() {
        let x = Tensor::new(vec![3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let y = Tensor::new(vec![3, 1], vec![0.0, 1.0, 0.0]).unwrap();
        assert!(cka_matrices(&x, &y).unwrap().abs() < 1e-15);
    }

    #[test]
    fn both_evaluation_paths_agree() {
        let x = random(6, 3, 1);
        let y = random(6, 4, 2);
        let wide_x = Tensor::concat_cols(&[&x, &Tensor::zeros(&[6, 40])]).unwrap();
        let a = cka_matrices(&x, &y).unwrap();
        let b = cka_matrices(&wide_x, &y).unwrap();
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn errors() {
        let x = act(random(5, 2, 1));
        let mut y = act(random(5, 2, 2));
        y.fingerprint = 8;
        assert!(matches!(linear_cka(&x, &y), Err(Error::Probe(_))));
        let c = act(Tensor::full(&[5, 2], 3.0));
        assert!(matches!(linear_cka(&x, &c), Err(Error::Probe(_))));
    }

    proptest! {
        #[test]
        fn invariances(seed in 0u64..1000, c in 0.1f64..10.0) {
            let x = random(12, 5, seed);
            let y = random(12, 4, seed + 1);
            prop_assert!((cka_matrices(&x, &x).unwrap() - 1.0).abs() < 1e-9);
            let q = orthogonal(5, seed + 2);
            let xq = x.matmul(&q).unwrap();
            prop_assert!((cka_matrices(&x, &xq).unwrap() - 1.0).abs() < 1e-6);
            prop_assert!((cka_matrices(&x, &x.scale(-c)).unwrap() - 1.0).abs() < 1e-6);
            let xy = cka_matrices(&x, &y).unwrap();
            prop_assert!((xy - cka_matrices(&y, &x).unwrap()).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&xy));
        }
    }
}
