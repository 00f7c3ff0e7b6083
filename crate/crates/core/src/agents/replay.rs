use std::collections::VecDeque;

use rand::Rng;

use crate::envs::GridPos;

/// Transition as kept in the replay buffer.
///
/// Positions and goal are retained so the reward can be recomputed under a
/// different stage definition (landscape protocol).
#[derive(Debug, Clone, PartialEq)]
pub struct StoredTransition {
    pub features: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_features: Vec<f64>,
    /// Episode reached the goal. Time-limit cuts are not terminal and bootstrap.
    pub done: bool,
    pub pos: GridPos,
    pub next_pos: GridPos,
    pub goal: GridPos,
    pub reward_env: f64,
}

/// Fixed-capacity FIFO buffer.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: VecDeque<StoredTransition>,
    capacity: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            items: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn push(&mut self, t: StoredTransition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
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

    pub fn get(&self, i: usize) -> &StoredTransition {
        &self.items[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &StoredTransition> {
        self.items.iter()
    }

    /// Uniform indices with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        (0..n).map(|_| rng.gen_range(0..self.items.len())).collect()
    }
}
