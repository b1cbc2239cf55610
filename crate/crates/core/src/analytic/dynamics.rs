use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::analytic::features::{overlap_kernel, FeatureMatrix};
use crate::error::{Error, Result};
use crate::nn::{argmax, softmax_cross_entropy, Targets};
use crate::numeric::Tensor;

/// Single-head frozen-feature model `f(x) = θᵀ g(x)`; only `θ` (p×C) trains.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenHead {
    pub theta: Tensor,
    pub learning_rate: f64,
}

impl FrozenHead {
    pub fn zeros(p: usize, classes: usize, learning_rate: f64) -> Self {
        Self {
            theta: Tensor::zeros(&[p, classes]),
            learning_rate,
        }
    }

    pub fn logits(&self, g: &FeatureMatrix) -> Result<Tensor> {
        g.matrix().matmul(&self.theta)
    }
}

/// `η·‖Θ(x)‖·‖∂L/∂f‖` with Euclidean norms.
pub fn lemma_bound(kernel_row: &[f64], loss_grad: &[f64], eta: f64) -> Result<f64> {
    if kernel_row.len() != loss_grad.len() {
        return Err(Error::Dimension {
            op: "lemma_bound",
            left: vec![kernel_row.len()],
            right: vec![loss_grad.len()],
        });
    }
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    Ok(eta * norm(kernel_row) * norm(loss_grad))
}

/// State after one simulated step (step 0 is the starting point).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub step: usize,
    /// Task-2 loss on the batch, measured before the update (full set at step 0).
    pub task2_loss: f64,
    pub task1_acc: f64,
    pub task1_loss: f64,
    /// Largest per-point, per-class bound of this step.
    pub bound: f64,
    /// Largest realized `|Δf(x)|` on task-1 points.
    pub realized_delta_max: f64,
    /// Largest `|Δf| − bound` over points and classes; positive means a violation.
    pub bound_excess: f64,
    /// Largest gap between realized and kernel-predicted `Δf`.
    pub kernel_error: f64,
    /// Largest `|f_t(x) − f_0(x)|` on task-1 points.
    pub logit_drift: f64,
    pub weight_distance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    /// Trained weights after each step; index 0 is the start.
    pub weights: Vec<Tensor>,
}

/// Distance and cosine of each recorded weight to the first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftPoint {
    pub step: usize,
    pub distance: f64,
    /// `None` when a zero weight makes the angle undefined.
    pub cosine: Option<f64>,
}

pub fn weight_drift_report(trajectory: &Trajectory) -> Vec<DriftPoint> {
    let Some(w0) = trajectory.weights.first() else {
        return Vec::new();
    };
    let n0 = w0.frobenius_norm();
    trajectory
        .weights
        .iter()
        .enumerate()
        .map(|(step, w)| {
            let diff = w.sub(w0).expect("weights keep their shape");
            let distance = diff.frobenius_norm();
            let nw = w.frobenius_norm();
            let cosine = if distance == 0.0 {
                Some(1.0)
            } else if n0 == 0.0 || nw == 0.0 {
                None
            } else {
                Some(w.dot(w0).expect("same shape") / (n0 * nw))
            };
            DriftPoint { step, distance, cosine }
        })
        .collect()
}

impl Trajectory {
    /// CSV with header `step,task2_loss,task1_acc,bound,realized_delta_max,weight_distance`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Probe(format!("csv output failed: {e}"));
        w.write_record(["step", "task2_loss", "task1_acc", "bound", "realized_delta_max", "weight_distance"])
            .map_err(err)?;
        for s in &self.steps {
            w.write_record([
                s.step.to_string(),
                s.task2_loss.to_string(),
                s.task1_acc.to_string(),
                s.bound.to_string(),
                s.realized_delta_max.to_string(),
                s.weight_distance.to_string(),
            ])
            .map_err(err)?;
        }
        w.flush().map_err(|e| Error::Io {
            path: "<csv>".into(),
            source: e,
        })
    }

    pub fn max_bound_excess(&self) -> f64 {
        self.steps.iter().map(|s| s.bound_excess).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_kernel_error(&self) -> f64 {
        self.steps.iter().map(|s| s.kernel_error).fold(0.0, f64::max)
    }

    pub fn final_step(&self) -> &TrajectoryStep {
        self.steps.last().expect("a trajectory holds its starting point")
    }
}

/// Task-1 evaluation points.
#[derive(Clone, Copy, Debug)]
pub struct EvalPoints<'a> {
    pub features: &'a FeatureMatrix,
    pub labels: &'a [usize],
}

pub(crate) fn accuracy_of(logits: &Tensor, labels: &[usize]) -> f64 {
    let hits = (0..logits.rows()).filter(|&i| argmax(logits.row(i)) == labels[i]).count();
    hits as f64 / logits.rows().max(1) as f64
}

pub(crate) fn batch_ranges(n: usize, batch: Option<usize>, steps: usize) -> Result<Vec<Vec<usize>>> {
    let b = batch.unwrap_or(n);
    if n == 0 || b == 0 {
        return Err(Error::config("analytic.batch_size", "needs examples and a positive batch size"));
    }
    let per_epoch = n.div_ceil(b);
    Ok((0..steps)
        .map(|s| {
            let k = s % per_epoch;
            (k * b..((k + 1) * b).min(n)).collect()
        })
        .collect())
}

/// Realized vs predicted change on task-1 points, plus per-class bounds.
/// `dldf` is the effective gradient whose kernel sum predicts the change.
pub(crate) struct StepCheck {
    pub bound: f64,
    pub realized: f64,
    pub excess: f64,
    pub kernel_error: f64,
}

pub(crate) fn check_step(kernel: &Tensor, dldf: &Tensor, eta: f64, realized: &Tensor) -> Result<StepCheck> {
    let predicted = kernel.matmul(dldf)?.scale(-eta);
    let kernel_error = realized.sub(&predicted)?.max_abs();
    let classes = dldf.cols();
    let mut col_norms = vec![0.0; classes];
    for i in 0..dldf.rows() {
        for (a, v) in col_norms.iter_mut().zip(dldf.row(i)) {
            *a += v * v;
        }
    }
    col_norms.iter_mut().for_each(|a| *a = a.sqrt());
    let (mut bound, mut excess, mut rmax) = (0.0f64, f64::NEG_INFINITY, 0.0f64);
    for x in 0..kernel.rows() {
        let kn = kernel.row(x).iter().map(|v| v * v).sum::<f64>().sqrt();
        for c in 0..classes {
            let b = eta * kn * col_norms[c];
            let d = realized.get(x, c).abs();
            bound = bound.max(b);
            rmax = rmax.max(d);
            excess = excess.max(d - b);
        }
    }
    Ok(StepCheck {
        bound,
        realized: rmax,
        excess,
        kernel_error,
    })
}

/// Trains `model.theta` on `(train, targets)` with the mean cross-entropy for `steps`
/// steps (full batch unless `batch` is set; mini-batches cycle in stored order),
/// recording the task-1 logit change against the kernel prediction and the bound.
pub fn head_sgd_simulate(
    model: &mut FrozenHead,
    train: &FeatureMatrix,
    targets: &Targets,
    eval: EvalPoints<'_>,
    steps: usize,
    batch: Option<usize>,
) -> Result<Trajectory> {
    if train.width() != model.theta.rows() || eval.features.width() != model.theta.rows() {
        return Err(Error::Dimension {
            op: "head_sgd_simulate",
            left: model.theta.shape().to_vec(),
            right: vec![train.width(), eval.features.width()],
        });
    }
    if targets.len() != train.len() || eval.labels.len() != eval.features.len() {
        return Err(Error::Data("target count does not match feature rows".into()));
    }
    let eta = model.learning_rate;
    let batches = batch_ranges(train.len(), batch, steps)?;
    let full_kernel = overlap_kernel(eval.features, train)?.theta;
    let eval_targets = Targets::Hard(eval.labels.to_vec());
    let f0 = model.logits(eval.features)?;
    let (l0, _) = softmax_cross_entropy(&f0, &eval_targets, eval.features.len())?;
    let (t2_loss0, _) = softmax_cross_entropy(&train.matrix().matmul(&model.theta)?, targets, train.len())?;
    let mut weights = vec![model.theta.clone()];
    let mut out = vec![TrajectoryStep {
        step: 0,
        task2_loss: t2_loss0,
        task1_acc: accuracy_of(&f0, eval.labels),
        task1_loss: l0,
        bound: 0.0,
        realized_delta_max: 0.0,
        bound_excess: 0.0,
        kernel_error: 0.0,
        logit_drift: 0.0,
        weight_distance: 0.0,
    }];
    let mut f_prev = f0.clone();
    let g = train.matrix();
    for (s, idx) in batches.iter().enumerate() {
        let gb = g.select_rows(idx);
        let logits = gb.matmul(&model.theta)?;
        let (loss, dldf) = softmax_cross_entropy(&logits, &targets.select(idx), idx.len())?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("task-2 loss diverged at step {}", s + 1)));
        }
        let grad = gb.transpose()?.matmul(&dldf)?;
        model.theta.axpy(-eta, &grad)?;
        let f = model.logits(eval.features)?;
        let realized = f.sub(&f_prev)?;
        let kernel = if idx.len() == train.len() {
            full_kernel.clone()
        } else {
            select_cols(&full_kernel, idx)
        };
        let chk = check_step(&kernel, &dldf, eta, &realized)?;
        let (l1, _) = softmax_cross_entropy(&f, &eval_targets, eval.features.len())?;
        out.push(TrajectoryStep {
            step: s + 1,
            task2_loss: loss,
            task1_acc: accuracy_of(&f, eval.labels),
            task1_loss: l1,
            bound: chk.bound,
            realized_delta_max: chk.realized,
            bound_excess: chk.excess,
            kernel_error: chk.kernel_error,
            logit_drift: f.sub(&f0)?.max_abs(),
            weight_distance: model.theta.sub(&weights[0])?.frobenius_norm(),
        });
        weights.push(model.theta.clone());
        f_prev = f;
    }
    Ok(Trajectory { steps: out, weights })
}

pub(crate) fn select_cols(t: &Tensor, idx: &[usize]) -> Tensor {
    let mut data = Vec::with_capacity(t.rows() * idx.len());
    for i in 0..t.rows() {
        data.extend(idx.iter().map(|&j| t.get(i, j)));
    }
    Tensor::from_parts(vec![t.rows(), idx.len()], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Rng;

    fn fm(rows: &[Vec<f64>]) -> FeatureMatrix {
        FeatureMatrix::new(Tensor::from_rows(rows).unwrap(), 0).unwrap()
    }

    fn random(n: usize, p: usize, r: &mut Rng) -> FeatureMatrix {
        FeatureMatrix::new(Tensor::new(vec![n, p], (0..n * p).map(|_| r.normal()).collect()).unwrap(), 0).unwrap()
    }

    #[test]
    fn one_step_hand_value() {
        // θ = 0, two classes, two train points: ∂L/∂f = (softmax − y)/2 = (±1/4)
        let train = fm(&[vec![1.0, 0.0], vec![0.0, 2.0]]);
        let test = fm(&[vec![1.0, 1.0]]);
        let mut m = FrozenHead::zeros(2, 2, 0.5);
        let t = head_sgd_simulate(
            &mut m,
            &train,
            &Targets::Hard(vec![0, 1]),
            EvalPoints {
                features: &test,
                labels: &[0],
            },
            1,
            None,
        )
        .unwrap();
        // Θ(x,·) = (1, 2); Δf_0 = −0.5·(1·(−¼) + 2·¼) = −0.125, Δf_1 = +0.125
        let f = m.logits(&test).unwrap();
        assert!((f.get(0, 0) + 0.125).abs() < 1e-15);
        assert!((f.get(0, 1) - 0.125).abs() < 1e-15);
        assert!(t.steps[1].kernel_error < 1e-15);
    }

    #[test]
    fn lemma_bound_cases() {
        assert_eq!(lemma_bound(&[0.0, 0.0], &[1.0, 2.0], 0.1).unwrap(), 0.0);
        // one training point: Cauchy–Schwarz is an equality
        let (k, g, eta) = (3.0, -0.4, 0.7);
        let b = lemma_bound(&[k], &[g], eta).unwrap();
        assert!((b - (eta * k * g).abs()).abs() < 1e-12);
        assert!(lemma_bound(&[1.0], &[1.0, 2.0], 0.1).is_err());
    }

    #[test]
    fn bound_holds_on_random_instance() {
        let mut r = Rng::new(3);
        let train = random(16, 6, &mut r);
        let test = random(16, 6, &mut r);
        let labels: Vec<usize> = (0..16).map(|i| i % 3).collect();
        let mut m = FrozenHead::zeros(6, 3, 0.05);
        let t = head_sgd_simulate(
            &mut m,
            &train,
            &Targets::Hard(labels.clone()),
            EvalPoints {
                features: &test,
                labels: &labels,
            },
            100,
            None,
        )
        .unwrap();
        assert!(t.max_bound_excess() <= 1e-9);
        assert!(t.max_kernel_error() <= 1e-10);
        assert_eq!(t.steps.len(), 101);
        let mut m2 = FrozenHead::zeros(6, 3, 0.05);
        let mb = head_sgd_simulate(
            &mut m2,
            &train,
            &Targets::Hard(labels.clone()),
            EvalPoints {
                features: &test,
                labels: &labels,
            },
            20,
            Some(5),
        )
        .unwrap();
        assert!(mb.max_bound_excess() <= 1e-9);
        assert!(mb.max_kernel_error() <= 1e-10);
    }

    #[test]
    fn drift_report_edges() {
        let t = Trajectory {
            steps: vec![],
            weights: vec![Tensor::zeros(&[2, 2])],
        };
        assert_eq!(
            weight_drift_report(&t),
            vec![DriftPoint {
                step: 0,
                distance: 0.0,
                cosine: Some(1.0)
            }]
        );
    }

    #[test]
    fn zero_gradient_keeps_weights() {
        // all-zero features give zero gradient
        let train = fm(&[vec![0.0, 0.0], vec![0.0, 0.0]]);
        let test = fm(&[vec![1.0, 0.0]]);
        let mut m = FrozenHead {
            theta: Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap(),
            learning_rate: 0.3,
        };
        let t = head_sgd_simulate(
            &mut m,
            &train,
            &Targets::Hard(vec![0, 1]),
            EvalPoints {
                features: &test,
                labels: &[0],
            },
            5,
            None,
        )
        .unwrap();
        assert!(weight_drift_report(&t).iter().all(|d| d.distance == 0.0));
    }

    #[test]
    fn csv_header() {
        let mut m = FrozenHead::zeros(1, 2, 0.1);
        let f = fm(&[vec![1.0]]);
        let t = head_sgd_simulate(
            &mut m,
            &f,
            &Targets::Hard(vec![0]),
            EvalPoints {
                features: &f,
                labels: &[0],
            },
            1,
            None,
        )
        .unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("step,task2_loss,task1_acc,bound,realized_delta_max,weight_distance\n0,0.69"));
        assert_eq!(s.lines().count(), 3);
    }
}
