//! Rank-based prioritized replay.

use std::sync::Arc;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::MeshGraph;

#[derive(Clone, Debug)]
pub struct Transition {
    pub graph: Arc<MeshGraph>,
    pub actions: Vec<u8>,
    /// Scalar reward in slot 0, or the (cost, error) pair.
    pub reward: [f64; 2],
    pub next: Arc<MeshGraph>,
    pub done: bool,
    pub preference: Option<[f64; 2]>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReplayConfig {
    pub capacity: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Total probability mass spread uniformly over all stored items.
    pub uniform: f64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            capacity: 10_000,
            alpha: 0.5,
            beta: 0.4,
            uniform: 0.001,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Sample {
    pub indices: Vec<usize>,
    /// Importance weights divided by their batch maximum.
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    pub config: ReplayConfig,
    items: Vec<Transition>,
    priority: Vec<f64>,
    next: usize,
    max_priority: f64,
}

impl ReplayBuffer {
    pub fn new(config: ReplayConfig) -> Self {
        Self {
            config,
            items: Vec::with_capacity(config.capacity.min(1 << 16)),
            priority: Vec::new(),
            next: 0,
            max_priority: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }

    /// New items enter at the current highest priority so they are seen soon.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.config.capacity {
            self.items.push(t);
            self.priority.push(self.max_priority);
        } else {
            self.items[self.next] = t;
            self.priority[self.next] = self.max_priority;
        }
        self.next = (self.next + 1) % self.config.capacity;
    }

    pub fn priorities(&self) -> &[f64] {
        &self.priority
    }

    pub fn set_priority(&mut self, i: usize, td_error: f64) {
        let p = td_error.abs();
        self.priority[i] = p;
        self.max_priority = self.max_priority.max(p);
    }

    /// `P(i) = (1 − u)·rank(i)^−α / Σ_j rank(j)^−α + u/N`, rank 1 for the largest |δ|.
    pub fn probabilities(&self) -> Vec<f64> {
        rank_probabilities(&self.priority, self.config.alpha, self.config.uniform)
    }

    /// Draws `m` items with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, m: usize, rng: &mut R) -> Sample {
        let probs = self.probabilities();
        let dist = WeightedIndex::new(&probs).expect("non-empty buffer with positive mass");
        let n = probs.len() as f64;
        let indices: Vec<usize> = (0..m).map(|_| dist.sample(rng)).collect();
        let raw: Vec<f64> = indices.iter().map(|&i| (n * probs[i]).powf(-self.config.beta)).collect();
        let top = raw.iter().copied().fold(0.0, f64::max);
        Sample {
            weights: raw.iter().map(|w| w / top).collect(),
            indices,
        }
    }
}

pub fn rank_probabilities(priority: &[f64], alpha: f64, uniform: f64) -> Vec<f64> {
    let n = priority.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| priority[b].total_cmp(&priority[a]).then(a.cmp(&b)));
    let mut mass = vec![0.0; n];
    for (r, &i) in order.iter().enumerate() {
        mass[i] = ((r + 1) as f64).powf(-alpha);
    }
    let total: f64 = mass.iter().sum();
    mass.iter().map(|m| (1.0 - uniform) * m / total + uniform / n as f64).collect()
}
