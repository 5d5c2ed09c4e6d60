//! Prioritized experience replay: a ring of transitions with a sum tree over
//! `priority^α`, stratified sampling and importance weights
//! `w_i = (N·P(i))^{−β}` normalized by the batch maximum.
//!
//! Frames are stored as f32 tensors and actions as compact h×w index grids;
//! the one-hot expansion happens lazily at training time.

use rand::Rng;

use crate::action::ActionMatrix;
use crate::error::{DclError, Result};
use crate::tensor::{Map2f, Tensor3f};

/// One replay record: `(I, A, R, I′)`.
#[derive(Debug, Clone)]
pub struct Transition {
    pub frame: Tensor3f,
    pub actions: ActionMatrix,
    pub reward: Map2f,
    pub next_frame: Tensor3f,
}

impl Transition {
    fn validate(&self) -> Result<()> {
        let (h, w) = self.frame.spatial_shape();
        let ok = self.next_frame.spatial_shape() == (h, w)
            && self.frame.channels() == self.next_frame.channels()
            && (self.actions.height(), self.actions.width()) == (h, w)
            && (self.reward.height(), self.reward.width()) == (h, w);
        if ok {
            Ok(())
        } else {
            Err(DclError::ShapeMismatch("transition fields disagree on h x w".into()))
        }
    }
}

/// Binary sum tree over leaf values; leaves hold `p^α` and internal nodes
/// hold subtree sums, so prefix sampling is a root-to-leaf descent.
#[derive(Debug, Clone)]
struct SumTree {
    capacity: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    fn new(capacity: usize) -> Self {
        Self { capacity, nodes: vec![0.0; 2 * capacity] }
    }

    fn total(&self) -> f64 {
        self.nodes[1]
    }

    fn set(&mut self, idx: usize, value: f64) {
        let mut node = self.capacity + idx;
        self.nodes[node] = value;
        while node > 1 {
            node /= 2;
            self.nodes[node] = self.nodes[2 * node] + self.nodes[2 * node + 1];
        }
    }

    fn get(&self, idx: usize) -> f64 {
        self.nodes[self.capacity + idx]
    }

    /// Leaf whose cumulative range contains `prefix ∈ [0, total)`.
    fn descend(&self, mut prefix: f64) -> usize {
        let mut node = 1;
        while node < self.capacity {
            let left = 2 * node;
            if prefix < self.nodes[left] {
                node = left;
            } else {
                prefix -= self.nodes[left];
                node = left + 1;
            }
        }
        node - self.capacity
    }
}

/// Replay buffer configuration.
#[derive(Debug, Clone, Copy)]
pub struct ReplayConfig {
    pub capacity: usize,
    /// Priority exponent α.
    pub alpha: f64,
    /// Additive floor applied to updated priorities.
    pub priority_floor: f64,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self { capacity: 4096, alpha: 0.6, priority_floor: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct PrioritizedBuffer {
    cfg: ReplayConfig,
    items: Vec<Transition>,
    priorities: Vec<f64>,
    tree: SumTree,
    next_slot: usize,
}

impl PrioritizedBuffer {
    pub fn new(cfg: ReplayConfig) -> Self {
        assert!(cfg.capacity > 0, "capacity must be positive");
        let tree = SumTree::new(cfg.capacity.next_power_of_two());
        Self { cfg, items: Vec::new(), priorities: Vec::new(), tree, next_slot: 0 }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.cfg.capacity
    }

    pub fn priority(&self, idx: usize) -> Option<f64> {
        self.priorities.get(idx).copied()
    }

    /// Direct sum of `p^α` over stored items; the tree root must match this.
    pub fn direct_priority_mass(&self) -> f64 {
        self.priorities.iter().map(|p| p.powf(self.cfg.alpha)).sum()
    }

    pub fn tree_priority_mass(&self) -> f64 {
        self.tree.total()
    }

    /// Store a transition with priority = max stored priority (1 if empty).
    /// At capacity the oldest item is overwritten.
    pub fn push(&mut self, t: Transition) -> Result<()> {
        t.validate()?;
        let priority = if self.priorities.is_empty() {
            1.0
        } else {
            self.priorities.iter().copied().fold(f64::MIN, f64::max)
        };
        let slot = self.next_slot;
        if slot < self.items.len() {
            self.items[slot] = t;
            self.priorities[slot] = priority;
        } else {
            self.items.push(t);
            self.priorities.push(priority);
        }
        self.tree.set(slot, priority.powf(self.cfg.alpha));
        self.next_slot = (slot + 1) % self.cfg.capacity;
        Ok(())
    }

    pub fn get(&self, idx: usize) -> Option<&Transition> {
        self.items.get(idx)
    }

    /// Stratified prioritized sample of `batch` indices with importance
    /// weights `(N·P(i))^{−β}` normalized by the batch maximum.
    pub fn sample<R: Rng>(
        &self,
        batch: usize,
        beta: f64,
        rng: &mut R,
    ) -> Result<SampledBatch<'_>> {
        if self.items.len() < batch || batch == 0 {
            return Err(DclError::UnderfullBuffer { size: self.items.len(), need: batch.max(1) });
        }
        let total = self.tree.total();
        if !(total > 0.0) {
            return Err(DclError::NonFinite("replay priority mass"));
        }
        let n = self.items.len() as f64;
        let mut indices = Vec::with_capacity(batch);
        let mut weights = Vec::with_capacity(batch);
        let stratum = total / batch as f64;
        for s in 0..batch {
            let lo = s as f64 * stratum;
            let prefix = lo + rng.gen::<f64>() * stratum;
            let idx = self.tree.descend(prefix.min(total * (1.0 - 1e-12)));
            let idx = idx.min(self.items.len() - 1);
            let prob = self.tree.get(idx) / total;
            weights.push((n * prob).powf(-beta));
            indices.push(idx);
        }
        let w_max = weights.iter().fold(0.0f64, |a, &b| a.max(b));
        if w_max > 0.0 {
            for w in &mut weights {
                *w /= w_max;
            }
        }
        let items = indices.iter().map(|&i| &self.items[i]).collect();
        Ok(SampledBatch { indices, weights, items })
    }

    /// Re-prioritize sampled items from their TD errors:
    /// `p_i ← |δ_i| + floor`.
    pub fn update_priorities(&mut self, indices: &[usize], td_errors: &[f64]) -> Result<()> {
        assert_eq!(indices.len(), td_errors.len());
        for (&idx, &delta) in indices.iter().zip(td_errors) {
            if idx >= self.items.len() {
                return Err(DclError::IndexOutOfRange { index: idx, size: self.items.len() });
            }
            let p = delta.abs() + self.cfg.priority_floor;
            self.priorities[idx] = p;
            self.tree.set(idx, p.powf(self.cfg.alpha));
        }
        Ok(())
    }
}

/// Output of [`PrioritizedBuffer::sample`].
#[derive(Debug)]
pub struct SampledBatch<'a> {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
    pub items: Vec<&'a Transition>,
}
