use std::collections::VecDeque;

use super::env::RlState;
use crate::error::{Error, Result};
use crate::numeric::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Experience {
    pub state: RlState,
    pub action: usize,
    pub reward: f64,
    pub next: RlState,
    pub terminal: bool,
}

/// Bounded FIFO of experiences; the oldest entry is evicted when full.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    capacity: usize,
    items: VecDeque<Experience>,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::invalid("replay capacity must be positive"));
        }
        Ok(ReplayMemory {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, e: Experience) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(e);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        self.items.iter()
    }

    /// `k` distinct indices drawn uniformly without replacement.
    pub fn sample_indices(&self, k: usize, rng: &mut Rng) -> Result<Vec<usize>> {
        if self.items.len() < k {
            return Err(Error::invalid(format!(
                "replay memory holds {} experiences, minibatch needs {k}",
                self.items.len()
            )));
        }
        Ok(rng.sample_indices(self.items.len(), k))
    }

    pub fn sample(&self, k: usize, rng: &mut Rng) -> Result<Vec<Experience>> {
        Ok(self
            .sample_indices(k, rng)?
            .into_iter()
            .map(|i| self.items[i])
            .collect())
    }

    pub fn get(&self, i: usize) -> Option<&Experience> {
        self.items.get(i)
    }
}
