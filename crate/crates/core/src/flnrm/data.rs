use std::collections::{HashMap, VecDeque};

use crate::diffmath::Tensor;
use crate::error::{Error, Result};

/// Distinct reward values in order of first observation.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardVocab {
    values: Vec<f64>,
    capacity: usize,
}

impl RewardVocab {
    pub fn new(capacity: usize) -> Self {
        Self {
            values: Vec::new(),
            capacity,
        }
    }

    pub fn from_values(values: Vec<f64>, capacity: usize) -> Result<Self> {
        let mut v = Self::new(capacity);
        for x in values {
            v.observe(x)?;
        }
        Ok(v)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index(&self, r: f64) -> Result<usize> {
        self.values
            .iter()
            .position(|&v| v == r)
            .ok_or(Error::UnknownReward(r))
    }

    /// Class index of `r`, appending it if unseen.
    pub fn observe(&mut self, r: f64) -> Result<usize> {
        if let Ok(i) = self.index(r) {
            return Ok(i);
        }
        if !r.is_finite() {
            return Err(Error::NonFinite("reward".into()));
        }
        if self.values.len() == self.capacity {
            return Err(Error::InvalidArgument(format!(
                "reward {r} exceeds vocabulary capacity {}",
                self.capacity
            )));
        }
        self.values.push(r);
        Ok(self.values.len() - 1)
    }

    pub fn encode(&self, rewards: &[f64]) -> Result<Vec<usize>> {
        rewards.iter().map(|&r| self.index(r)).collect()
    }
}

/// Interned observations. Environments with few distinct observations (the
/// grid has one per cell) are stored once and referenced by index, which
/// also lets the loss ground each distinct observation once per batch.
#[derive(Clone, Debug, Default)]
pub struct ObsPool {
    items: Vec<Tensor>,
    lookup: HashMap<(Vec<usize>, Vec<u64>), usize>,
}

impl ObsPool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, obs: &Tensor) -> usize {
        let key = (
            obs.shape().to_vec(),
            obs.data().iter().map(|v| v.to_bits()).collect(),
        );
        *self.lookup.entry(key).or_insert_with(|| {
            self.items.push(obs.clone());
            self.items.len() - 1
        })
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.items[i]
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// One recorded episode: the observation after each action, the reward that
/// followed it, and the ground-truth label (diagnostics only).
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub obs: Vec<usize>,
    pub rewards: Vec<f64>,
    pub labels: Vec<usize>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }
}

/// Bounded FIFO of episodes; the oldest is evicted first.
#[derive(Clone, Debug)]
pub struct EpisodeBuffer {
    capacity: usize,
    pub pool: ObsPool,
    episodes: VecDeque<Episode>,
}

impl EpisodeBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("buffer capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            pool: ObsPool::new(),
            episodes: VecDeque::with_capacity(capacity),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn episodes(&self) -> impl Iterator<Item = &Episode> {
        self.episodes.iter()
    }

    pub fn get(&self, i: usize) -> &Episode {
        &self.episodes[i]
    }

    /// Empty episodes carry no reward signal and are skipped.
    pub fn push(&mut self, obs: &[Tensor], rewards: &[f64], labels: &[usize]) -> Result<()> {
        if obs.len() != rewards.len() || (!labels.is_empty() && labels.len() != obs.len()) {
            return Err(Error::InvalidArgument(format!(
                "episode misaligned: {} observations, {} rewards, {} labels",
                obs.len(),
                rewards.len(),
                labels.len()
            )));
        }
        if obs.is_empty() {
            return Ok(());
        }
        let obs = obs.iter().map(|o| self.pool.intern(o)).collect();
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(Episode {
            obs,
            rewards: rewards.to_vec(),
            labels: labels.to_vec(),
        });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocab_grows_in_first_seen_order() {
        let mut v = RewardVocab::new(2);
        assert_eq!(v.observe(0.0).unwrap(), 0);
        assert_eq!(v.observe(1.0).unwrap(), 1);
        assert_eq!(v.observe(0.0).unwrap(), 0);
        assert!(v.observe(-1.0).is_err());
        assert!(matches!(v.index(5.0), Err(Error::UnknownReward(_))));
        assert_eq!(v.encode(&[1.0, 0.0]).unwrap(), vec![1, 0]);
    }

    #[test]
    fn buffer_is_bounded_fifo() {
        let mut b = EpisodeBuffer::new(2).unwrap();
        let o = |v: f64| Tensor::vector(vec![v]).unwrap();
        for k in 0..3 {
            b.push(&[o(k as f64), o(0.0)], &[0.0, k as f64], &[]).unwrap();
        }
        assert_eq!(b.len(), 2);
        assert_eq!(b.get(0).rewards, vec![0.0, 1.0]);
        assert_eq!(b.pool.len(), 3);
        assert!(b.push(&[o(0.0)], &[], &[]).is_err());
        assert!(EpisodeBuffer::new(0).is_err());
    }
}
