//! Ring-buffer replay of environment steps and the training-ratio scheduler.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::world_model::WorldModelBatch;

/// One stored step: the observation, the action that led to it, and what came with it.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f32>,
    /// One-hot previous action (all zeros on the first step of an episode).
    pub prev_action: Vec<f32>,
    pub reward: f32,
    pub cont: f32,
    pub is_first: bool,
}

/// Fixed-capacity step storage addressed by a global step index.
///
/// Step `i` lives in slot `i % capacity`; only the last `capacity` indices are valid,
/// so a sampled window of valid indices can never straddle an overwrite.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    obs_dim: usize,
    action_dim: usize,
    obs: Vec<f32>,
    actions: Vec<f32>,
    rewards: Vec<f32>,
    cont: Vec<f32>,
    is_first: Vec<bool>,
    env_steps: u64,
    replayed_steps: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize, action_dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidConfig("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            obs_dim,
            action_dim,
            obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            cont: Vec::new(),
            is_first: Vec::new(),
            env_steps: 0,
            replayed_steps: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Steps ever appended (keeps counting past eviction).
    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    /// Steps ever handed out in sampled batches.
    pub fn replayed_steps(&self) -> u64 {
        self.replayed_steps
    }

    pub fn measured_ratio(&self) -> f64 {
        if self.env_steps == 0 {
            0.0
        } else {
            self.replayed_steps as f64 / self.env_steps as f64
        }
    }

    /// Oldest global index still stored.
    pub fn first_valid(&self) -> u64 {
        self.env_steps - self.len() as u64
    }

    pub fn append(&mut self, t: &Transition) -> Result<()> {
        if t.obs.len() != self.obs_dim || t.prev_action.len() != self.action_dim {
            return Err(Error::ShapeMismatch {
                context: "replay transition",
                expected: vec![self.obs_dim, self.action_dim],
                found: vec![t.obs.len(), t.prev_action.len()],
            });
        }
        let slot = (self.env_steps % self.capacity as u64) as usize;
        if self.len() < self.capacity {
            self.obs.extend_from_slice(&t.obs);
            self.actions.extend_from_slice(&t.prev_action);
            self.rewards.push(t.reward);
            self.cont.push(t.cont);
            self.is_first.push(t.is_first);
        } else {
            self.obs[slot * self.obs_dim..(slot + 1) * self.obs_dim].copy_from_slice(&t.obs);
            self.actions[slot * self.action_dim..(slot + 1) * self.action_dim]
                .copy_from_slice(&t.prev_action);
            self.rewards[slot] = t.reward;
            self.cont[slot] = t.cont;
            self.is_first[slot] = t.is_first;
        }
        self.env_steps += 1;
        Ok(())
    }

    /// Step with global index `i`, if still stored.
    pub fn get(&self, i: u64) -> Option<Transition> {
        if i < self.first_valid() || i >= self.env_steps {
            return None;
        }
        let s = (i % self.capacity as u64) as usize;
        Some(Transition {
            obs: self.obs[s * self.obs_dim..(s + 1) * self.obs_dim].to_vec(),
            prev_action: self.actions[s * self.action_dim..(s + 1) * self.action_dim].to_vec(),
            reward: self.rewards[s],
            cont: self.cont[s],
            is_first: self.is_first[s],
        })
    }

    /// `batch` uniformly drawn windows of `length` consecutive valid steps, time-major.
    pub fn sample<T: Scalar, R: Rng + ?Sized>(
        &mut self,
        batch: usize,
        length: usize,
        rng: &mut R,
    ) -> Result<WorldModelBatch<T>> {
        if length == 0 || batch == 0 || self.len() < length {
            return Err(Error::InsufficientData {
                needed: length.max(1),
                available: self.len(),
            });
        }
        let lo = self.first_valid();
        let hi = self.env_steps - length as u64;
        let starts: Vec<u64> = (0..batch).map(|_| rng.random_range(lo..=hi)).collect();
        let n = batch * length;
        let (od, ad) = (self.obs_dim, self.action_dim);
        let mut obs = Vec::with_capacity(n * od);
        let mut actions = Vec::with_capacity(n * ad);
        let mut rewards = Vec::with_capacity(n);
        let mut cont = Vec::with_capacity(n);
        let mut is_first = Vec::with_capacity(n);
        let lit = |x: &f32| T::lit(*x as f64);
        for t in 0..length as u64 {
            for &s0 in &starts {
                let s = ((s0 + t) % self.capacity as u64) as usize;
                obs.extend(self.obs[s * od..(s + 1) * od].iter().map(lit));
                actions.extend(self.actions[s * ad..(s + 1) * ad].iter().map(lit));
                rewards.push(lit(&self.rewards[s]));
                cont.push(lit(&self.cont[s]));
                is_first.push(self.is_first[s]);
            }
        }
        self.replayed_steps += n as u64;
        Ok(WorldModelBatch {
            batch,
            length,
            obs: Tensor::matrix(n, od, obs),
            actions: Tensor::matrix(n, ad, actions),
            rewards: Tensor::matrix(n, 1, rewards),
            cont: Tensor::matrix(n, 1, cont),
            is_first,
        })
    }

    /// Stored columns in slot order (for checkpointing).
    pub fn raw(&self) -> ReplayRaw<'_> {
        ReplayRaw {
            obs: &self.obs,
            actions: &self.actions,
            rewards: &self.rewards,
            cont: &self.cont,
            is_first: &self.is_first,
        }
    }

    /// Rebuilds a buffer from checkpointed columns and counters.
    #[allow(clippy::too_many_arguments)]
    pub fn from_raw(
        capacity: usize,
        obs_dim: usize,
        action_dim: usize,
        obs: Vec<f32>,
        actions: Vec<f32>,
        rewards: Vec<f32>,
        cont: Vec<f32>,
        is_first: Vec<bool>,
        env_steps: u64,
        replayed_steps: u64,
    ) -> Result<Self> {
        let n = rewards.len();
        let consistent = n <= capacity
            && obs.len() == n * obs_dim
            && actions.len() == n * action_dim
            && cont.len() == n
            && is_first.len() == n
            && (n as u64) == env_steps.min(capacity as u64);
        if !consistent {
            return Err(Error::Checkpoint("replay columns inconsistent with counters".into()));
        }
        Ok(Self {
            capacity,
            obs_dim,
            action_dim,
            obs,
            actions,
            rewards,
            cont,
            is_first,
            env_steps,
            replayed_steps,
        })
    }
}

pub struct ReplayRaw<'a> {
    pub obs: &'a [f32],
    pub actions: &'a [f32],
    pub rewards: &'a [f32],
    pub cont: &'a [f32],
    pub is_first: &'a [bool],
}

/// Number of `batch x length` training steps needed to bring replayed/env back to `ratio`.
pub fn train_ops_due(env_steps: u64, replayed_steps: u64, ratio: f64, batch: usize, length: usize) -> u64 {
    let per_op = (batch * length) as f64;
    let deficit = ratio * env_steps as f64 - replayed_steps as f64;
    if deficit <= 0.0 || per_op <= 0.0 {
        0
    } else {
        (deficit / per_op).floor() as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn step(i: usize, first: bool) -> Transition {
        Transition {
            obs: vec![i as f32, 0.0],
            prev_action: vec![0.0, 1.0, 0.0],
            reward: -(i as f32),
            cont: 1.0,
            is_first: first,
        }
    }

    #[test]
    fn append_and_evict() {
        let mut b = ReplayBuffer::new(4, 2, 3).unwrap();
        b.append(&step(0, true)).unwrap();
        assert_eq!(b.len(), 1);
        for i in 1..5 {
            b.append(&step(i, false)).unwrap();
        }
        assert_eq!(b.len(), 4);
        assert_eq!(b.env_steps(), 5);
        assert!(b.get(0).is_none());
        assert_eq!(b.get(1).unwrap().obs[0], 1.0);
        for i in 5..20 {
            b.append(&step(i, false)).unwrap();
        }
        assert_eq!(b.env_steps(), 20);
        assert_eq!(b.len(), 4);
    }

    #[test]
    fn exact_window_is_only_choice() {
        let mut b = ReplayBuffer::new(10, 2, 3).unwrap();
        for i in 0..4 {
            b.append(&step(i, i == 0)).unwrap();
        }
        let batch: WorldModelBatch<f32> = b.sample(3, 4, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for t in 0..4 {
            for r in batch.step_rows(t) {
                assert_eq!(batch.obs.at(r, 0), t as f32);
            }
        }
        assert_eq!(b.replayed_steps(), 12);
        assert!(matches!(
            b.sample::<f32, _>(1, 5, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn windows_never_cross_the_overwrite_seam() {
        let mut b = ReplayBuffer::new(7, 2, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for i in 0..50 {
            b.append(&step(i, false)).unwrap();
            if b.len() >= 3 {
                let batch: WorldModelBatch<f64> = b.sample(8, 3, &mut rng).unwrap();
                for s in 0..8 {
                    let ids: Vec<f64> = (0..3).map(|t| batch.obs.at(t * 8 + s, 0)).collect();
                    assert!(ids.windows(2).all(|w| w[1] == w[0] + 1.0), "{ids:?}");
                    assert!(ids[0] as u64 >= b.first_valid());
                }
            }
        }
    }

    #[test]
    fn replay_counter_counts_batch_steps() {
        let mut b = ReplayBuffer::new(2000, 2, 3).unwrap();
        for i in 0..100 {
            b.append(&step(i, false)).unwrap();
        }
        let _: WorldModelBatch<f32> = b.sample(16, 64, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(b.replayed_steps(), 1024);
    }

    #[test]
    fn scheduler_examples() {
        assert_eq!(train_ops_due(0, 0, 128.0, 16, 64), 0);
        assert_eq!(train_ops_due(8, 0, 128.0, 16, 64), 1);
        assert_eq!(train_ops_due(144, 0, 512.0, 16, 64), 72);
        assert_eq!(train_ops_due(144, 72 * 1024, 512.0, 16, 64), 0);
        assert_eq!(train_ops_due(10, 99_999, 1.0, 16, 64), 0);
    }

    #[test]
    fn raw_roundtrip() {
        let mut b = ReplayBuffer::new(3, 2, 3).unwrap();
        for i in 0..5 {
            b.append(&step(i, i == 0)).unwrap();
        }
        let r = b.raw();
        let back = ReplayBuffer::from_raw(
            3,
            2,
            3,
            r.obs.to_vec(),
            r.actions.to_vec(),
            r.rewards.to_vec(),
            r.cont.to_vec(),
            r.is_first.to_vec(),
            b.env_steps(),
            b.replayed_steps(),
        )
        .unwrap();
        assert_eq!(back, b);
    }
}
