//! Dual-memory replay.
//!
//! `b1` keeps every other transition in insertion order so that contiguous
//! runs of it are temporally correlated; `b2` keeps transitions whose reward
//! beat the running mean of all rewards seen before them. A batch is half a
//! contiguous `b1` run and half uniform `b2` draws.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::KahanSum;

/// One environment interaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    /// Cuts the bootstrap in the critic target.
    pub done: bool,
    pub episode_id: u64,
    pub step_index: u64,
}

/// Fixed-capacity FIFO; the oldest entry is overwritten when full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ring<T> {
    items: Vec<T>,
    capacity: usize,
    head: usize,
}

impl<T> Ring<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "ring capacity must be positive");
        Ring { items: Vec::new(), capacity, head: 0 }
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

    pub fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.head] = item;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    /// The `i`-th entry counted from the oldest.
    pub fn get(&self, i: usize) -> &T {
        assert!(i < self.items.len());
        &self.items[(self.head + i) % self.items.len()]
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> + '_ {
        (0..self.len()).map(move |i| self.get(i))
    }
}

/// A minibatch laid out as row-major matrices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Batch {
    pub size: usize,
    pub states: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_states: Vec<f64>,
    pub dones: Vec<f64>,
}

impl Batch {
    pub fn from_transitions<'a, I: IntoIterator<Item = &'a Transition>>(items: I) -> Self {
        let mut b = Batch::default();
        for t in items {
            b.size += 1;
            b.states.extend_from_slice(&t.state);
            b.actions.extend_from_slice(&t.action);
            b.rewards.push(t.reward);
            b.next_states.extend_from_slice(&t.next_state);
            b.dones.push(if t.done { 1.0 } else { 0.0 });
        }
        b
    }
}

/// Where each row of a BIER batch came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    /// (start offset with oldest = 0, length) of each contiguous `b1` run.
    pub b1_runs: Vec<(usize, usize)>,
    pub b2: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BierConfig {
    pub b1_capacity: usize,
    pub b2_capacity: usize,
    /// Length of each contiguous `b1` run; the `b1` half of a batch is
    /// filled with as many runs as needed.
    pub sequence_length: usize,
}

impl Default for BierConfig {
    fn default() -> Self {
        BierConfig { b1_capacity: 500_000, b2_capacity: 500_000, sequence_length: 128 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BierBuffers {
    pub b1: Ring<Transition>,
    pub b2: Ring<Transition>,
    pub sequence_length: usize,
    pub(crate) reward_sum: KahanSum,
    pub(crate) reward_count: u64,
}

impl BierBuffers {
    pub fn new(cfg: &BierConfig) -> Self {
        BierBuffers {
            b1: Ring::new(cfg.b1_capacity),
            b2: Ring::new(cfg.b2_capacity),
            sequence_length: cfg.sequence_length.max(1),
            reward_sum: KahanSum::default(),
            reward_count: 0,
        }
    }

    /// Mean of every reward inserted so far (0 before the first insertion).
    pub fn reward_mean(&self) -> f64 {
        if self.reward_count == 0 {
            0.0
        } else {
            self.reward_sum.value() / self.reward_count as f64
        }
    }

    pub fn reward_count(&self) -> u64 {
        self.reward_count
    }

    pub fn insert(&mut self, t: Transition) {
        let optimistic = self.reward_count > 0 && t.reward > self.reward_mean();
        self.reward_sum.add(t.reward);
        self.reward_count += 1;
        match (t.step_index % 2 == 0, optimistic) {
            (true, true) => {
                self.b1.push(t.clone());
                self.b2.push(t);
            }
            (true, false) => self.b1.push(t),
            (false, true) => self.b2.push(t),
            (false, false) => {}
        }
    }

    /// Draws the row origins of a `batch`-sized minibatch.
    pub fn plan<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<BatchPlan> {
        let half1 = batch / 2;
        let half2 = batch - half1;
        let seq = self.sequence_length;
        let longest = seq.min(half1);
        if self.b1.len() < longest.max(1) {
            return Err(Error::InsufficientData { needed: longest.max(1), have: self.b1.len() });
        }
        if self.b2.len() < half2.max(1) {
            return Err(Error::InsufficientData { needed: half2.max(1), have: self.b2.len() });
        }
        let mut b1_runs = Vec::new();
        let mut left = half1;
        while left > 0 {
            let len = left.min(seq);
            b1_runs.push((rng.random_range(0..=self.b1.len() - len), len));
            left -= len;
        }
        let b2 = (0..half2).map(|_| rng.random_range(0..self.b2.len())).collect();
        Ok(BatchPlan { b1_runs, b2 })
    }

    pub fn gather(&self, plan: &BatchPlan) -> Batch {
        let b1 = plan.b1_runs.iter().flat_map(|&(s, n)| (s..s + n).map(|i| self.b1.get(i)));
        let b2 = plan.b2.iter().map(|&i| self.b2.get(i));
        Batch::from_transitions(b1.chain(b2))
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Batch> {
        let plan = self.plan(batch, rng)?;
        Ok(self.gather(&plan))
    }

    pub fn len(&self) -> usize {
        self.b1.len() + self.b2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stored transition `i` over the concatenation `b1 ++ b2`.
    pub fn stored(&self, i: usize) -> &Transition {
        if i < self.b1.len() {
            self.b1.get(i)
        } else {
            self.b2.get(i - self.b1.len())
        }
    }
}

/// Plain uniform replay, used for ablations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformReplay {
    pub buffer: Ring<Transition>,
}

impl UniformReplay {
    pub fn new(capacity: usize) -> Self {
        UniformReplay { buffer: Ring::new(capacity) }
    }

    pub fn insert(&mut self, t: Transition) {
        self.buffer.push(t);
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Batch> {
        if self.buffer.len() < batch {
            return Err(Error::InsufficientData { needed: batch, have: self.buffer.len() });
        }
        Ok(Batch::from_transitions(
            (0..batch).map(|_| self.buffer.get(rng.random_range(0..self.buffer.len()))),
        ))
    }
}

/// The replay memory used by the trainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Replay {
    Bier(BierBuffers),
    Uniform(UniformReplay),
}

impl Replay {
    pub fn insert(&mut self, t: Transition) {
        match self {
            Replay::Bier(b) => b.insert(t),
            Replay::Uniform(u) => u.insert(t),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Batch> {
        match self {
            Replay::Bier(b) => b.sample(batch, rng),
            Replay::Uniform(u) => u.sample(batch, rng),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Replay::Bier(b) => b.len(),
            Replay::Uniform(u) => u.buffer.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn stored(&self, i: usize) -> &Transition {
        match self {
            Replay::Bier(b) => b.stored(i),
            Replay::Uniform(u) => u.buffer.get(i),
        }
    }

    /// `n` stored states drawn uniformly with replacement, row-major.
    pub fn sample_states<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<f64>> {
        let len = self.len();
        if len < n || len == 0 {
            return Err(Error::InsufficientData { needed: n, have: len });
        }
        let mut out = Vec::new();
        for _ in 0..n {
            out.extend_from_slice(&self.stored(rng.random_range(0..len)).state);
        }
        Ok(out)
    }
}
