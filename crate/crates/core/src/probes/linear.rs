//! Multinomial logistic regression on concatenated stage activations.
//!
//! Features are standardized with training statistics. The objective is mean
//! cross-entropy plus `(l2/2)·‖W‖²` (bias unpenalized), minimized by full-batch
//! gradient descent with Barzilai–Borwein steps and Armijo backtracking.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{argmax, softmax_cross_entropy, Targets};
use crate::numeric::Tensor;
use crate::probes::cka::ActivationMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearProbeConfig {
    pub l2: f64,
    /// Stop once the objective changes by less than this.
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for LinearProbeConfig {
    fn default() -> Self {
        Self {
            l2: 1e-3,
            tolerance: 1e-6,
            max_iter: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearProbeResult {
    pub accuracy: f64,
    pub train_accuracy: f64,
    /// Share of total absolute weight on each stage's block; sums to 1.
    pub stage_mass: Vec<(String, f64)>,
    pub iterations: usize,
    pub converged: bool,
}

fn concat_blocks(blocks: &[ActivationMatrix], what: &str) -> Result<(Tensor, Vec<usize>)> {
    let first = blocks
        .first()
        .ok_or_else(|| Error::Probe(format!("no {what} activations")))?;
    if blocks.iter().any(|b| b.fingerprint != first.fingerprint) {
        return Err(Error::Probe(format!("{what} activations come from different probe sets")));
    }
    let parts: Vec<&Tensor> = blocks.iter().map(|b| &b.matrix).collect();
    Ok((Tensor::concat_cols(&parts)?, blocks.iter().map(|b| b.matrix.cols()).collect()))
}

struct Scaling {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl Scaling {
    fn fit(x: &Tensor) -> Self {
        let (m, n) = (x.rows(), x.cols());
        let mut mean = vec![0.0; n];
        let mut var = vec![0.0; n];
        for i in 0..m {
            for (a, v) in mean.iter_mut().zip(x.row(i)) {
                *a += v;
            }
        }
        mean.iter_mut().for_each(|a| *a /= m as f64);
        for i in 0..m {
            for ((s, v), a) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                *s += (v - a) * (v - a);
            }
        }
        // constant features stay constant (zero) after centering
        let std = var.iter().map(|s| (s / m as f64).sqrt()).map(|s| if s > 1e-12 { s } else { 1.0 }).collect();
        Self { mean, std }
    }

    fn apply(&self, x: &Tensor) -> Tensor {
        let mut out = x.clone();
        for i in 0..out.rows() {
            for ((v, a), s) in out.row_mut(i).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - a) / s;
            }
        }
        out
    }
}

/// Objective and gradient at `w` (d×c) and `b` packed as one vector `[w; b]`.
fn objective(x: &Tensor, y: &Targets, theta: &[f64], d: usize, c: usize, l2: f64) -> Result<(f64, Vec<f64>)> {
    let w = Tensor::from_parts(vec![d, c], theta[..d * c].to_vec());
    let mut logits = x.matmul(&w)?;
    for i in 0..logits.rows() {
        for (v, b) in logits.row_mut(i).iter_mut().zip(&theta[d * c..]) {
            *v += b;
        }
    }
    let (loss, g) = softmax_cross_entropy(&logits, y, x.rows())?;
    let gw = x.transpose()?.matmul(&g)?;
    let mut grad = gw.into_data();
    for (gv, wv) in grad.iter_mut().zip(&theta[..d * c]) {
        *gv += l2 * wv;
    }
    let mut gb = vec![0.0; c];
    for i in 0..g.rows() {
        for (a, v) in gb.iter_mut().zip(g.row(i)) {
            *a += v;
        }
    }
    grad.extend(gb);
    let reg: f64 = theta[..d * c].iter().map(|v| v * v).sum::<f64>() * l2 / 2.0;
    Ok((loss + reg, grad))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fits on `train` blocks and reports accuracy on `heldout` blocks (same stages, same order).
pub fn linear_probe(
    train: &[ActivationMatrix],
    train_labels: &[usize],
    heldout: &[ActivationMatrix],
    heldout_labels: &[usize],
    n_classes: usize,
    cfg: &LinearProbeConfig,
) -> Result<LinearProbeResult> {
    let (xtr, widths) = concat_blocks(train, "training")?;
    let (xte, widths_te) = concat_blocks(heldout, "held-out")?;
    if widths != widths_te || train.iter().zip(heldout).any(|(a, b)| a.stage != b.stage) {
        return Err(Error::Probe("training and held-out stages differ".into()));
    }
    if xtr.rows() != train_labels.len() || xte.rows() != heldout_labels.len() {
        return Err(Error::Probe("label count does not match activation rows".into()));
    }
    if xtr.rows() == 0 || xte.rows() == 0 || n_classes < 2 {
        return Err(Error::Probe("linear probe needs examples and at least two classes".into()));
    }
    if train_labels.iter().chain(heldout_labels).any(|&y| y >= n_classes) {
        return Err(Error::Probe("label out of range".into()));
    }
    let scaling = Scaling::fit(&xtr);
    let xtr = scaling.apply(&xtr);
    if xtr.max_abs() == 0.0 {
        return Err(Error::Probe("all activations are constant".into()));
    }
    let xte = scaling.apply(&xte);
    let (d, c) = (xtr.cols(), n_classes);
    let y = Targets::Hard(train_labels.to_vec());

    let mut theta = vec![0.0; d * c + c];
    let (mut f, mut g) = objective(&xtr, &y, &theta, d, c, cfg.l2)?;
    let mut step = 1.0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        let gg = dot(&g, &g);
        if gg == 0.0 {
            converged = true;
            break;
        }
        let mut t = step;
        let (next, fn_, gn) = loop {
            let cand: Vec<f64> = theta.iter().zip(&g).map(|(p, gv)| p - t * gv).collect();
            let (fc, gc) = objective(&xtr, &y, &cand, d, c, cfg.l2)?;
            if fc <= f - 1e-4 * t * gg || t < 1e-12 {
                break (cand, fc, gc);
            }
            t *= 0.5;
        };
        if !fn_.is_finite() {
            return Err(Error::Numeric(format!("linear probe diverged at iteration {iterations}")));
        }
        let s: Vec<f64> = next.iter().zip(&theta).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        step = if sy > 0.0 { dot(&s, &s) / sy } else { 1.0 };
        let change = (f - fn_).abs();
        theta = next;
        f = fn_;
        g = gn;
        if change < cfg.tolerance {
            converged = true;
            break;
        }
    }

    let score = |x: &Tensor, labels: &[usize]| -> Result<f64> {
        let w = Tensor::from_parts(vec![d, c], theta[..d * c].to_vec());
        let logits = x.matmul(&w)?;
        let hits = (0..x.rows())
            .filter(|&i| {
                let row: Vec<f64> = logits.row(i).iter().zip(&theta[d * c..]).map(|(v, b)| v + b).collect();
                argmax(&row) == labels[i]
            })
            .count();
        Ok(hits as f64 / x.rows() as f64)
    };

    let mut mass = Vec::with_capacity(widths.len());
    let mut offset = 0;
    for (block, &wdt) in train.iter().zip(&widths) {
        let m: f64 = theta[offset * c..(offset + wdt) * c].iter().map(|v| v.abs()).sum();
        mass.push((block.stage.clone(), m));
        offset += wdt;
    }
    let total: f64 = mass.iter().map(|(_, m)| m).sum();
    if total > 0.0 {
        mass.iter_mut().for_each(|(_, m)| *m /= total);
    }
    Ok(LinearProbeResult {
        accuracy: score(&xte, heldout_labels)?,
        train_accuracy: score(&xtr, train_labels)?,
        stage_mass: mass,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{finite_diff_grad, Rng};

    fn block(stage: &str, m: Tensor, fp: u64) -> ActivationMatrix {
        ActivationMatrix {
            stage: stage.into(),
            matrix: m,
            fingerprint: fp,
        }
    }

    fn separable(seed: u64, n: usize) -> (Vec<ActivationMatrix>, Vec<usize>) {
        let mut r = Rng::new(seed);
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let informative: Vec<f64> = labels
            .iter()
            .flat_map(|&y| {
                let mut v = vec![0.0; 3];
                v[y] = 4.0;
                v
            })
            .collect();
        let noise: Vec<f64> = (0..n * 2).map(|_| r.normal()).collect();
        (
            vec![
                block("stage1", Tensor::new(vec![n, 2], noise).unwrap(), seed),
                block("stage2", Tensor::new(vec![n, 3], informative).unwrap(), seed),
            ],
            labels,
        )
    }

    #[test]
    fn separable_data_is_solved_and_mass_follows_the_signal() {
        let (tr, ytr) = separable(1, 60);
        let (te, yte) = separable(2, 30);
        let r = linear_probe(&tr, &ytr, &te, &yte, 3, &LinearProbeConfig::default()).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert!((r.stage_mass.iter().map(|(_, m)| m).sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(r.stage_mass[1].1 > 0.9, "{:?}", r.stage_mass);
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let mut r = Rng::new(5);
        let (d, c, n) = (3, 3, 7);
        let x = Tensor::new(vec![n, d], (0..n * d).map(|_| r.normal()).collect()).unwrap();
        let y = Targets::Hard((0..n).map(|i| i % c).collect());
        let theta = Tensor::new(vec![d * c + c], (0..d * c + c).map(|_| r.normal()).collect()).unwrap();
        let (_, g) = objective(&x, &y, theta.data(), d, c, 0.3).unwrap();
        let fd = finite_diff_grad(|t| objective(&x, &y, t.data(), d, c, 0.3).unwrap().0, &theta, 1e-6).unwrap();
        for (a, b) in g.iter().zip(fd.data()) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
    }

    #[test]
    fn inconsistent_inputs_are_rejected() {
        let (tr, ytr) = separable(1, 12);
        let (mut te, yte) = separable(2, 12);
        te[1].fingerprint = 99;
        assert!(matches!(
            linear_probe(&tr, &ytr, &te, &yte, 3, &LinearProbeConfig::default()),
            Err(Error::Probe(_))
        ));
        let constant = vec![block("stage1", Tensor::full(&[4, 2], 1.0), 0)];
        assert!(matches!(
            linear_probe(&constant, &[0, 1, 0, 1], &constant, &[0, 1, 0, 1], 2, &LinearProbeConfig::default()),
            Err(Error::Probe(_))
        ));
    }
}
