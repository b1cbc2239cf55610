use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{BatchGroup, Model, OptimizerConfig, Penalty};
use crate::numeric::Rng;

/// Stored examples from earlier tasks, each remembered with the head it trains.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    parts: Vec<(String, Dataset)>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            parts: Vec::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.parts.iter().map(|(_, d)| d.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Inserts a uniform subsample of `data` (without replacement) up to the remaining capacity.
    pub fn populate(&mut self, head: &str, data: &Dataset, rng: &mut Rng) -> Result<usize> {
        let room = self.capacity - self.len();
        let idx = rng.sample_without_replacement(data.len(), room.min(data.len()));
        let n = idx.len();
        if n > 0 {
            self.parts.push((head.to_string(), data.select(&idx)));
        }
        Ok(n)
    }

    /// Number of buffer examples in a batch of `batch`: `round(ρ·B)`, at least one when `ρ > 0`.
    pub fn replay_count(fraction: f64, batch: usize) -> Result<usize> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::config("replay.fraction", "must lie in [0, 1]"));
        }
        if fraction == 0.0 {
            return Ok(0);
        }
        Ok(((fraction * batch as f64).round() as usize).clamp(1, batch))
    }

    /// `k` examples drawn uniformly with replacement, grouped by head in buffer order.
    pub fn sample(&self, k: usize, rng: &mut Rng) -> Result<Vec<(String, Dataset)>> {
        let total = self.len();
        if k > 0 && total == 0 {
            return Err(Error::config("replay.capacity", "cannot replay from an empty buffer"));
        }
        let mut picks: Vec<Vec<usize>> = vec![Vec::new(); self.parts.len()];
        for _ in 0..k {
            let mut j = rng.below(total);
            for (p, (_, d)) in self.parts.iter().enumerate() {
                if j < d.len() {
                    picks[p].push(j);
                    break;
                }
                j -= d.len();
            }
        }
        Ok(self
            .parts
            .iter()
            .zip(picks)
            .filter(|(_, idx)| !idx.is_empty())
            .map(|((h, d), idx)| (h.clone(), d.select(&idx)))
            .collect())
    }
}

/// One step on `new` plus `round(ρ·B)` replayed examples, each routed through its own head.
#[allow(clippy::too_many_arguments)]
pub fn replay_train_step(
    model: &mut Model,
    new: Option<BatchGroup<'_>>,
    buffer: &ReplayBuffer,
    fraction: f64,
    batch_size: usize,
    opt: &OptimizerConfig,
    penalty: Option<&dyn Penalty>,
    rng: &mut Rng,
) -> Result<f64> {
    let k = ReplayBuffer::replay_count(fraction, batch_size)?;
    let replayed = buffer.sample(k, rng)?;
    let mut groups: Vec<BatchGroup<'_>> = new.into_iter().collect();
    for (head, d) in &replayed {
        groups.push(BatchGroup {
            head,
            inputs: d.inputs().clone(),
            targets: d.targets(),
        });
    }
    if groups.is_empty() {
        return Err(Error::Data("replay step with no examples".into()));
    }
    model.train_step_groups(&groups, opt, penalty)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Labels, Split};
    use crate::numeric::Tensor;

    fn data(n: usize) -> Dataset {
        let x = Tensor::new(vec![n, 1], (0..n).map(|v| v as f64).collect()).unwrap();
        Dataset::new(x, vec![1], Labels::Hard(vec![0; n]), vec!["a".into()], Split::Train).unwrap()
    }

    #[test]
    fn replay_counts() {
        assert_eq!(ReplayBuffer::replay_count(0.25, 128).unwrap(), 32);
        assert_eq!(ReplayBuffer::replay_count(0.0, 128).unwrap(), 0);
        assert_eq!(ReplayBuffer::replay_count(0.001, 128).unwrap(), 1);
        assert_eq!(ReplayBuffer::replay_count(1.0, 128).unwrap(), 128);
        assert!(ReplayBuffer::replay_count(1.5, 128).is_err());
    }

    #[test]
    fn capacity_is_respected() {
        let mut b = ReplayBuffer::new(5);
        assert_eq!(b.populate("t1", &data(20), &mut Rng::new(0)).unwrap(), 5);
        assert_eq!(b.populate("t1", &data(20), &mut Rng::new(0)).unwrap(), 0);
        assert_eq!(b.len(), 5);
        let s = b.sample(40, &mut Rng::new(1)).unwrap();
        assert_eq!(s.iter().map(|(_, d)| d.len()).sum::<usize>(), 40);
    }

    #[test]
    fn empty_buffer_with_positive_fraction_fails() {
        let b = ReplayBuffer::new(5);
        assert!(matches!(b.sample(1, &mut Rng::new(0)), Err(Error::Config { .. })));
        assert!(b.sample(0, &mut Rng::new(0)).unwrap().is_empty());
    }
}
