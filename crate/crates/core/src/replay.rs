//! Prioritized experience replay (proportional variant).
//!
//! Transitions are kept in a fixed-capacity ring; each slot carries a
//! priority `p > 0`. Batches are drawn with probability `P(i) = p_i^alpha /
//! sum_j p_j^alpha` and corrected by importance weights
//! `w_i = (n * P(i))^(-beta)`, normalized by the batch maximum. Fresh items
//! enter at the current maximum priority so nothing starves before its first
//! replay.
//!
//! Capacity is small enough (1e4) that a prefix-sum scan per batch beats any
//! tree bookkeeping; no sum-tree here.

use rand::Rng;
use thiserror::Error;

/// Floor added to |TD error| when updating priorities; keeps them positive.
pub const PRIORITY_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("priority must be finite and positive, got {0}")]
    BadPriority(f64),
    #[error("need at least {need} stored transitions, have {have}")]
    InsufficientData { need: usize, have: usize },
    #[error("index {0} out of range")]
    IndexOutOfRange(usize),
    #[error("indices and errors have different lengths")]
    LengthMismatch,
}

/// One environment interaction, as stored for replay.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub next_obs: Vec<f64>,
    pub reward: f64,
    /// True termination (bootstrap off); time-limit truncation stays false.
    pub done: bool,
    /// Log-density of `action` under the policy that produced it.
    pub behavior_log_density: f64,
}

/// A sampled training batch: ring indices, transitions, normalized weights.
#[derive(Debug, Clone)]
pub struct SampledBatch {
    pub indices: Vec<usize>,
    pub transitions: Vec<Transition>,
    pub weights: Vec<f64>,
}

pub struct PerBuffer {
    capacity: usize,
    batch_size: usize,
    alpha: f64,
    beta: f64,
    items: Vec<Transition>,
    priorities: Vec<f64>,
    /// `priorities[i].powf(alpha)`, kept in sync on every write.
    pow_priorities: Vec<f64>,
    write: usize,
    cumulative: Vec<f64>,
}

impl PerBuffer {
    pub fn new(capacity: usize, batch_size: usize, alpha: f64, beta: f64) -> Self {
        assert!(capacity >= 1 && batch_size >= 1);
        PerBuffer {
            capacity,
            batch_size,
            alpha,
            beta,
            items: Vec::with_capacity(capacity),
            priorities: Vec::with_capacity(capacity),
            pow_priorities: Vec::with_capacity(capacity),
            write: 0,
            cumulative: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn priorities(&self) -> &[f64] {
        &self.priorities
    }

    #[inline]
    fn pow_alpha(&self, p: f64) -> f64 {
        if self.alpha == 1.0 {
            p
        } else {
            p.powf(self.alpha)
        }
    }

    /// Current maximum priority over live items (1.0 for an empty buffer).
    pub fn max_priority(&self) -> f64 {
        if self.priorities.is_empty() {
            1.0
        } else {
            self.priorities.iter().copied().fold(0.0, f64::max)
        }
    }

    /// Inserts a transition, evicting the oldest once at capacity. `None`
    /// assigns the current maximum priority.
    pub fn push(&mut self, t: Transition, priority: Option<f64>) -> Result<(), ReplayError> {
        let p = match priority {
            Some(p) => {
                if !p.is_finite() || p <= 0.0 {
                    return Err(ReplayError::BadPriority(p));
                }
                p
            }
            None => self.max_priority(),
        };
        let p_pow = self.pow_alpha(p);
        if self.items.len() < self.capacity {
            self.items.push(t);
            self.priorities.push(p);
            self.pow_priorities.push(p_pow);
        } else {
            self.items[self.write] = t;
            self.priorities[self.write] = p;
            self.pow_priorities[self.write] = p_pow;
        }
        self.write = (self.write + 1) % self.capacity;
        Ok(())
    }

    /// Probability of drawing each stored item under the current priorities.
    pub fn probabilities(&self) -> Vec<f64> {
        let total: f64 = self.pow_priorities.iter().sum();
        self.pow_priorities.iter().map(|p| p / total).collect()
    }

    /// Draws `batch_size` items (with replacement) proportionally to
    /// `priority^alpha`, with max-normalized importance weights.
    pub fn sample_batch(&mut self, rng: &mut impl Rng) -> Result<SampledBatch, ReplayError> {
        let n = self.items.len();
        if n < self.batch_size {
            return Err(ReplayError::InsufficientData {
                need: self.batch_size,
                have: n,
            });
        }
        self.cumulative.clear();
        self.cumulative.reserve(n);
        let mut acc = 0.0;
        for &p in &self.pow_priorities {
            acc += p;
            self.cumulative.push(acc);
        }
        let total = acc;

        let mut indices = Vec::with_capacity(self.batch_size);
        let mut weights = Vec::with_capacity(self.batch_size);
        for _ in 0..self.batch_size {
            let target = rng.random::<f64>() * total;
            let idx = self
                .cumulative
                .partition_point(|&c| c <= target)
                .min(n - 1);
            let prob = self.pow_priorities[idx] / total;
            indices.push(idx);
            weights.push((n as f64 * prob).powf(-self.beta));
        }
        let w_max = weights.iter().copied().fold(f64::MIN, f64::max);
        for w in &mut weights {
            *w /= w_max;
        }
        let transitions = indices.iter().map(|&i| self.items[i].clone()).collect();
        Ok(SampledBatch {
            indices,
            transitions,
            weights,
        })
    }

    /// Re-prioritizes sampled items from their TD errors:
    /// `p_i = |delta_i| + PRIORITY_FLOOR`.
    pub fn update_priorities(
        &mut self,
        indices: &[usize],
        td_errors: &[f64],
    ) -> Result<(), ReplayError> {
        if indices.len() != td_errors.len() {
            return Err(ReplayError::LengthMismatch);
        }
        for (&i, &delta) in indices.iter().zip(td_errors.iter()) {
            if i >= self.items.len() {
                return Err(ReplayError::IndexOutOfRange(i));
            }
            let p = delta.abs() + PRIORITY_FLOOR;
            if !p.is_finite() {
                return Err(ReplayError::BadPriority(p));
            }
            self.priorities[i] = p;
            self.pow_priorities[i] = self.pow_alpha(p);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn t(tag: f64) -> Transition {
        Transition {
            obs: vec![tag, 0.0],
            action: vec![0.1],
            next_obs: vec![tag, 1.0],
            reward: tag,
            done: false,
            behavior_log_density: -1.0,
        }
    }

    fn filled(n: usize, capacity: usize) -> PerBuffer {
        let mut buf = PerBuffer::new(capacity, 2, 1.0, 0.5);
        for k in 0..n {
            buf.push(t(k as f64), None).unwrap();
        }
        buf
    }

    #[test]
    fn push_grows_until_capacity_then_evicts_oldest() {
        let mut buf = PerBuffer::new(3, 2, 1.0, 0.5);
        buf.push(t(0.0), None).unwrap();
        assert_eq!(buf.len(), 1);
        for k in 1..=3 {
            buf.push(t(k as f64), None).unwrap();
        }
        assert_eq!(buf.len(), 3);
        // Oldest (tag 0) is gone; slot 0 now holds tag 3.
        assert!(buf.items.iter().all(|x| x.reward != 0.0));
        assert_eq!(buf.items[0].reward, 3.0);
    }

    #[test]
    fn rejects_non_finite_or_non_positive_priorities() {
        let mut buf = PerBuffer::new(4, 2, 1.0, 0.5);
        assert!(buf.push(t(0.0), Some(f64::NAN)).is_err());
        assert!(buf.push(t(0.0), Some(0.0)).is_err());
        assert!(buf.push(t(0.0), Some(-1.0)).is_err());
    }

    #[test]
    fn fresh_items_enter_at_the_running_max_priority() {
        let mut buf = PerBuffer::new(8, 2, 1.0, 0.5);
        buf.push(t(0.0), Some(0.5)).unwrap();
        buf.push(t(1.0), Some(2.5)).unwrap();
        buf.update_priorities(&[0], &[4.0]).unwrap();
        // Max is now 4 + floor.
        buf.push(t(2.0), None).unwrap();
        assert_eq!(buf.priorities()[2], 4.0 + PRIORITY_FLOOR);
        // After lowering everything, the max shrinks accordingly.
        buf.update_priorities(&[0, 1, 2], &[0.1, 0.2, 0.3]).unwrap();
        buf.push(t(3.0), None).unwrap();
        assert_eq!(buf.priorities()[3], 0.3 + PRIORITY_FLOOR);
    }

    #[test]
    fn two_item_probabilities_match_hand_normalization() {
        let mut buf = PerBuffer::new(4, 2, 1.0, 0.5);
        buf.push(t(0.0), Some(1.0)).unwrap();
        buf.push(t(1.0), Some(3.0)).unwrap();
        let p = buf.probabilities();
        assert!((p[0] - 0.25).abs() < 1e-15);
        assert!((p[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn importance_weights_match_the_closed_formula() {
        let mut buf = PerBuffer::new(4, 2, 1.0, 0.5);
        buf.push(t(0.0), Some(1.0)).unwrap();
        buf.push(t(1.0), Some(3.0)).unwrap();
        let mut rng = stream_rng(41, 0);
        // Draw until both items appear in one batch.
        for _ in 0..100 {
            let batch = buf.sample_batch(&mut rng).unwrap();
            let has = |i: usize| batch.indices.iter().position(|&x| x == i);
            if let (Some(a), Some(b)) = (has(0), has(1)) {
                assert!((batch.weights[a] - 1.0).abs() < 1e-12);
                assert!((batch.weights[b] - 0.57735).abs() < 1e-5);
                return;
            }
        }
        panic!("never sampled both items together");
    }

    #[test]
    fn equal_priorities_give_unit_weights() {
        let mut buf = filled(6, 8);
        let mut rng = stream_rng(42, 0);
        let batch = buf.sample_batch(&mut rng).unwrap();
        for w in batch.weights {
            assert!((w - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn insufficient_data_is_an_error() {
        let mut buf = PerBuffer::new(8, 4, 1.0, 0.5);
        buf.push(t(0.0), None).unwrap();
        let mut rng = stream_rng(43, 0);
        assert!(matches!(
            buf.sample_batch(&mut rng),
            Err(ReplayError::InsufficientData { .. })
        ));
    }

    #[test]
    fn priority_floor_keeps_zero_errors_alive() {
        let mut buf = filled(3, 4);
        buf.update_priorities(&[0], &[0.0]).unwrap();
        assert_eq!(buf.priorities()[0], PRIORITY_FLOOR);
        buf.update_priorities(&[0, 1], &[0.5, 1.5]).unwrap();
        assert!(buf.priorities()[1] > buf.priorities()[0]);
    }

    #[test]
    fn out_of_range_update_is_rejected() {
        let mut buf = filled(2, 4);
        assert!(matches!(
            buf.update_priorities(&[9], &[1.0]),
            Err(ReplayError::IndexOutOfRange(9))
        ));
        assert!(matches!(
            buf.update_priorities(&[0, 1], &[1.0]),
            Err(ReplayError::LengthMismatch)
        ));
    }

    #[test]
    fn sampling_frequencies_track_priorities_chi_squared() {
        // 10 items with known priorities; 1e5 draws; chi^2 GOF at the 1% level
        // (critical value 21.666 for 9 degrees of freedom).
        let mut buf = PerBuffer::new(16, 1, 1.0, 0.5);
        let priorities = [0.4, 1.0, 2.0, 0.7, 3.1, 0.2, 1.6, 0.9, 2.4, 0.5];
        for (k, &p) in priorities.iter().enumerate() {
            buf.push(t(k as f64), Some(p)).unwrap();
        }
        let probs = buf.probabilities();
        let mut rng = stream_rng(44, 0);
        let draws = 100_000usize;
        let mut counts = [0usize; 10];
        for _ in 0..draws {
            let batch = buf.sample_batch(&mut rng).unwrap();
            counts[batch.indices[0]] += 1;
        }
        let chi2: f64 = counts
            .iter()
            .zip(probs.iter())
            .map(|(&c, &p)| {
                let expected = p * draws as f64;
                (c as f64 - expected).powi(2) / expected
            })
            .sum();
        assert!(chi2 < 21.666, "chi^2 = {chi2}");
    }

    #[test]
    fn frequencies_follow_updated_priorities() {
        let mut buf = PerBuffer::new(16, 1, 1.0, 0.5);
        for k in 0..10 {
            buf.push(t(k as f64), Some(1.0)).unwrap();
        }
        let deltas = [0.3, 0.9, 2.0, 0.65, 3.0, 0.15, 1.55, 0.85, 2.35, 0.45];
        buf.update_priorities(&(0..10).collect::<Vec<_>>(), &deltas)
            .unwrap();
        let probs = buf.probabilities();
        let mut rng = stream_rng(45, 0);
        let draws = 100_000usize;
        let mut counts = [0usize; 10];
        for _ in 0..draws {
            let batch = buf.sample_batch(&mut rng).unwrap();
            counts[batch.indices[0]] += 1;
        }
        let chi2: f64 = counts
            .iter()
            .zip(probs.iter())
            .map(|(&c, &p)| {
                let expected = p * draws as f64;
                (c as f64 - expected).powi(2) / expected
            })
            .sum();
        assert!(chi2 < 21.666, "chi^2 = {chi2}");
    }

    #[test]
    fn eviction_keeps_priority_index_correspondence() {
        let mut rng = stream_rng(46, 0);
        let mut buf = PerBuffer::new(5, 2, 1.0, 0.5);
        // Mirror of (reward tag -> priority) maintained by hand.
        let mut mirror: Vec<(f64, f64)> = Vec::new();
        let mut next_tag = 0.0f64;
        for _ in 0..200 {
            if rng.random::<f64>() < 0.6 || mirror.is_empty() {
                let p = 0.1 + rng.random::<f64>();
                buf.push(t(next_tag), Some(p)).unwrap();
                if mirror.len() == 5 {
                    mirror.remove(0);
                }
                mirror.push((next_tag, p));
                next_tag += 1.0;
            } else {
                let i = rng.random_range(0..buf.len());
                let delta = rng.random::<f64>() * 3.0;
                buf.update_priorities(&[i], &[delta]).unwrap();
                let tag = buf.items[i].reward;
                let slot = mirror.iter_mut().find(|(t, _)| *t == tag).unwrap();
                slot.1 = delta.abs() + PRIORITY_FLOOR;
            }
            // Every live item's priority must match the mirror by tag.
            for (i, item) in buf.items.iter().enumerate() {
                let expect = mirror.iter().find(|(t, _)| *t == item.reward).unwrap().1;
                assert_eq!(buf.priorities()[i], expect);
            }
        }
    }

    #[test]
    fn weights_recomputable_from_priorities_exactly() {
        let mut buf = PerBuffer::new(16, 4, 1.0, 0.5);
        let ps = [0.4, 1.0, 2.0, 0.7, 3.1, 0.2];
        for (k, &p) in ps.iter().enumerate() {
            buf.push(t(k as f64), Some(p)).unwrap();
        }
        let mut rng = stream_rng(47, 0);
        let batch = buf.sample_batch(&mut rng).unwrap();
        let n = buf.len() as f64;
        let total: f64 = buf.priorities().iter().sum();
        let raw: Vec<f64> = batch
            .indices
            .iter()
            .map(|&i| (n * buf.priorities()[i] / total).powf(-0.5))
            .collect();
        let m = raw.iter().copied().fold(f64::MIN, f64::max);
        for (w, r) in batch.weights.iter().zip(raw.iter()) {
            assert!((w - r / m).abs() < 1e-12);
        }
    }
}
