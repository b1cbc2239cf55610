use crate::analytic::dynamics::{accuracy_of, batch_ranges, check_step, select_cols, EvalPoints, Trajectory, TrajectoryStep};
use crate::analytic::features::{overlap_kernel, FeatureMatrix};
use crate::error::{Error, Result};
use crate::nn::{softmax_cross_entropy, Targets};
use crate::numeric::Tensor;

/// Multi-head frozen-feature model `f⁽ⁱ⁾(x) = h⁽ⁱ⁾ᵀ θᵀ g(x)` with a linear layer
/// `θ` (p×k) and heads `h⁽ⁱ⁾` (k×Cᵢ).
#[derive(Clone, Debug, PartialEq)]
pub struct MultiHeadFrozen {
    pub theta: Tensor,
    pub head1: Tensor,
    pub head2: Tensor,
    pub learning_rate: f64,
}

/// Phase 1 trains `head2` alone; phase 2 freezes it and trains `θ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MultiHeadSchedule {
    pub head_steps: usize,
    pub body_steps: usize,
    pub batch: Option<usize>,
}

impl MultiHeadFrozen {
    fn check(&self) -> Result<()> {
        let k = self.theta.cols();
        if self.head1.rows() != k || self.head2.rows() != k {
            return Err(Error::Dimension {
                op: "multihead",
                left: self.theta.shape().to_vec(),
                right: vec![self.head1.rows(), self.head2.rows()],
            });
        }
        Ok(())
    }

    pub fn logits(&self, g: &FeatureMatrix, head: &Tensor) -> Result<Tensor> {
        g.matrix().matmul(&self.theta)?.matmul(head)
    }
}

/// Runs both phases, recording task-1 logits through `head1` after every step.
/// In phase 2 the realized `Δf⁽¹⁾` is checked against `−η Θ (∂L/∂f⁽²⁾) h⁽²⁾ᵀh⁽¹⁾`.
/// Recorded weights and distances refer to `θ`.
pub fn multihead_simulate(
    model: &mut MultiHeadFrozen,
    train: &FeatureMatrix,
    targets: &Targets,
    eval: EvalPoints<'_>,
    schedule: MultiHeadSchedule,
) -> Result<Trajectory> {
    model.check()?;
    if train.width() != model.theta.rows() || eval.features.width() != model.theta.rows() {
        return Err(Error::Dimension {
            op: "multihead_simulate",
            left: model.theta.shape().to_vec(),
            right: vec![train.width(), eval.features.width()],
        });
    }
    if targets.len() != train.len() || eval.labels.len() != eval.features.len() {
        return Err(Error::Data("target count does not match feature rows".into()));
    }
    let eta = model.learning_rate;
    let total = schedule.head_steps + schedule.body_steps;
    let batches = batch_ranges(train.len(), schedule.batch, total)?;
    let full_kernel = overlap_kernel(eval.features, train)?.theta;
    let eval_targets = Targets::Hard(eval.labels.to_vec());
    let f0 = model.logits(eval.features, &model.head1)?;
    let (l0, _) = softmax_cross_entropy(&f0, &eval_targets, eval.features.len())?;
    let (t2_0, _) = softmax_cross_entropy(&model.logits(train, &model.head2)?, targets, train.len())?;
    let mut steps = vec![TrajectoryStep {
        step: 0,
        task2_loss: t2_0,
        task1_acc: accuracy_of(&f0, eval.labels),
        task1_loss: l0,
        bound: 0.0,
        realized_delta_max: 0.0,
        bound_excess: 0.0,
        kernel_error: 0.0,
        logit_drift: 0.0,
        weight_distance: 0.0,
    }];
    let mut weights = vec![model.theta.clone()];
    let mut f_prev = f0.clone();
    let g = train.matrix();
    for (s, idx) in batches.iter().enumerate() {
        let gb = g.select_rows(idx);
        let hidden = gb.matmul(&model.theta)?;
        let logits = hidden.matmul(&model.head2)?;
        let (loss, dldf) = softmax_cross_entropy(&logits, &targets.select(idx), idx.len())?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("task-2 loss diverged at step {}", s + 1)));
        }
        let body_phase = s >= schedule.head_steps;
        // effective gradient whose kernel sum predicts Δf⁽¹⁾
        let effective = if body_phase {
            let dh = dldf.matmul(&model.head2.transpose()?)?;
            let grad = gb.transpose()?.matmul(&dh)?;
            model.theta.axpy(-eta, &grad)?;
            dh.matmul(&model.head1)?
        } else {
            let grad = hidden.transpose()?.matmul(&dldf)?;
            model.head2.axpy(-eta, &grad)?;
            Tensor::zeros(&[idx.len(), model.head1.cols()])
        };
        let f = model.logits(eval.features, &model.head1)?;
        let realized = f.sub(&f_prev)?;
        let kernel = if idx.len() == train.len() {
            full_kernel.clone()
        } else {
            select_cols(&full_kernel, idx)
        };
        let chk = check_step(&kernel, &effective, eta, &realized)?;
        let (l1, _) = softmax_cross_entropy(&f, &eval_targets, eval.features.len())?;
        steps.push(TrajectoryStep {
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
    Ok(Trajectory { steps, weights })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::dynamics::{head_sgd_simulate, FrozenHead};
    use crate::numeric::Rng;

    fn random(n: usize, p: usize, r: &mut Rng) -> Tensor {
        Tensor::new(vec![n, p], (0..n * p).map(|_| r.normal()).collect()).unwrap()
    }

    fn fm(t: Tensor) -> FeatureMatrix {
        FeatureMatrix::new(t, 0).unwrap()
    }

    #[test]
    fn orthogonal_heads_freeze_task1_logits() {
        let mut r = Rng::new(1);
        let train = fm(random(10, 4, &mut r));
        let test = fm(random(8, 4, &mut r));
        let labels: Vec<usize> = (0..8).map(|i| i % 2).collect();
        // heads live in disjoint hidden coordinates
        let head1 = Tensor::from_rows(&[vec![1.0, -1.0], vec![0.5, 0.2], vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let head2 = Tensor::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0], vec![0.3, 1.0], vec![-0.7, 0.1]]).unwrap();
        let mut m = MultiHeadFrozen {
            theta: random(4, 4, &mut r),
            head1,
            head2,
            learning_rate: 0.1,
        };
        let t = multihead_simulate(
            &mut m,
            &train,
            &Targets::Hard((0..10).map(|i| i % 2).collect()),
            EvalPoints {
                features: &test,
                labels: &labels,
            },
            MultiHeadSchedule {
                head_steps: 0,
                body_steps: 30,
                batch: None,
            },
        )
        .unwrap();
        assert!(t.final_step().logit_drift < 1e-12);
        assert!(t.final_step().weight_distance > 0.0);
        assert!(t.max_kernel_error() < 1e-10);
    }

    #[test]
    fn equal_heads_in_the_body_phase_follow_kernel_prediction() {
        let mut r = Rng::new(2);
        let train = fm(random(12, 5, &mut r));
        let test = fm(random(6, 5, &mut r));
        let labels: Vec<usize> = (0..6).map(|i| i % 3).collect();
        let h = random(3, 3, &mut r);
        let mut m = MultiHeadFrozen {
            theta: random(5, 3, &mut r),
            head1: h.clone(),
            head2: h,
            learning_rate: 0.05,
        };
        let t = multihead_simulate(
            &mut m,
            &train,
            &Targets::Hard((0..12).map(|i| i % 3).collect()),
            EvalPoints {
                features: &test,
                labels: &labels,
            },
            MultiHeadSchedule {
                head_steps: 5,
                body_steps: 20,
                batch: None,
            },
        )
        .unwrap();
        assert!(t.max_kernel_error() < 1e-10);
        assert!(t.max_bound_excess() < 1e-9);
        // phase 1 leaves task-1 logits alone
        assert_eq!(t.steps[5].logit_drift, 0.0);
        assert!(t.final_step().logit_drift > 0.0);
    }

    #[test]
    fn identity_linear_layer_matches_single_head_dynamics() {
        // with θ = I and h⁽¹⁾ = h⁽²⁾ = I the body phase is plain head training on Iθ
        let mut r = Rng::new(3);
        let train = fm(random(9, 3, &mut r));
        let test = fm(random(4, 3, &mut r));
        let labels = vec![0, 1, 2, 0];
        let targets = Targets::Hard((0..9).map(|i| i % 3).collect());
        let mut mh = MultiHeadFrozen {
            theta: Tensor::eye(3),
            head1: Tensor::eye(3),
            head2: Tensor::eye(3),
            learning_rate: 0.1,
        };
        let a = multihead_simulate(
            &mut mh,
            &train,
            &targets,
            EvalPoints {
                features: &test,
                labels: &labels,
            },
            MultiHeadSchedule {
                head_steps: 0,
                body_steps: 1,
                batch: None,
            },
        )
        .unwrap();
        let mut sh = FrozenHead {
            theta: Tensor::eye(3),
            learning_rate: 0.1,
        };
        let b = head_sgd_simulate(
            &mut sh,
            &train,
            &targets,
            EvalPoints {
                features: &test,
                labels: &labels,
            },
            1,
            None,
        )
        .unwrap();
        assert!(mh.theta.sub(&sh.theta).unwrap().max_abs() < 1e-15);
        assert!((a.steps[1].task1_loss - b.steps[1].task1_loss).abs() < 1e-14);
    }

    #[test]
    fn one_step_hand_value() {
        // p = 1, k = 1: Δf⁽¹⁾ = −η Θ (∂L/∂f⁽²⁾) h2 h1 for a two-class h2
        let train = fm(Tensor::from_rows(&[vec![2.0]]).unwrap());
        let test = fm(Tensor::from_rows(&[vec![1.0]]).unwrap());
        let mut m = MultiHeadFrozen {
            theta: Tensor::from_rows(&[vec![0.0]]).unwrap(),
            head1: Tensor::from_rows(&[vec![3.0]]).unwrap(),
            head2: Tensor::from_rows(&[vec![1.0, -1.0]]).unwrap(),
            learning_rate: 0.5,
        };
        multihead_simulate(
            &mut m,
            &train,
            &Targets::Hard(vec![0]),
            EvalPoints {
                features: &test,
                labels: &[0],
            },
            MultiHeadSchedule {
                head_steps: 0,
                body_steps: 1,
                batch: None,
            },
        )
        .unwrap();
        // ∂L/∂f⁽²⁾ = (−½, ½); times h2ᵀ = −1; Θ = 2; Δf⁽¹⁾ = −0.5·2·(−1)·3 = 3
        let f = m.logits(&test, &m.head1).unwrap();
        assert!((f.get(0, 0) - 3.0).abs() < 1e-15);
    }
}
