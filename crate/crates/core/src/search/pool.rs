//! Top-K candidate pool keyed by skeleton.

use crate::expr::ExpressionTree;
use serde_json::{json, Value};

#[derive(Clone, Debug, PartialEq)]
pub struct PoolEntry {
    pub key: String,
    /// Skeleton with fitted constants.
    pub tree: ExpressionTree,
    pub theta: Vec<f64>,
    pub nrmse: f64,
    pub reward: f64,
    pub nodes: usize,
    /// Global sample index at first discovery.
    pub discovered: usize,
}

impl PoolEntry {
    fn ranks_before(&self, other: &PoolEntry) -> bool {
        (other.reward, self.nodes, self.discovered) < (self.reward, other.nodes, other.discovered)
    }

    pub fn to_json(&self) -> Value {
        json!({
            "skeleton": self.key,
            "infix": self.tree.to_string(),
            "reward": self.reward,
            "nrmse": self.nrmse,
            "nodes": self.nodes,
            "discovered": self.discovered,
            "theta": self.theta,
        })
    }
}

/// The `capacity` best distinct skeletons seen so far, ordered by reward
/// (descending), then fewer nodes, then earlier discovery.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidatePool {
    capacity: usize,
    entries: Vec<PoolEntry>,
}

impl CandidatePool {
    pub fn new(capacity: usize) -> Self {
        CandidatePool {
            capacity: capacity.max(1),
            entries: Vec::new(),
        }
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn best(&self) -> Option<&PoolEntry> {
        self.entries.first()
    }

    /// Reward of the last entry once the pool is full.
    pub fn kth_reward(&self) -> Option<f64> {
        (self.entries.len() == self.capacity).then(|| self.entries[self.capacity - 1].reward)
    }

    /// Offers a candidate; non-finite fits and known skeletons are ignored.
    /// Returns whether the pool changed.
    pub fn offer(&mut self, entry: PoolEntry) -> bool {
        if !entry.nrmse.is_finite() || self.entries.iter().any(|e| e.key == entry.key) {
            return false;
        }
        let at = self
            .entries
            .iter()
            .position(|e| entry.ranks_before(e))
            .unwrap_or(self.entries.len());
        if at >= self.capacity {
            return false;
        }
        self.entries.insert(at, entry);
        self.entries.truncate(self.capacity);
        true
    }
}
