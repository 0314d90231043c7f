//! Tree-structured recurrent policy over skeleton decisions.
//!
//! One gated cell is shared by every decision:
//! `z = sigmoid(Wz x + Uz h + bz)`, `c = tanh(Wc x + Uc h + bc)`,
//! `h' = (1 - z) h + z c`. The input `x` is three one-hots: parent token,
//! previous sibling (or null), and level. Four heads (root, connector,
//! sequence, leaf) map `h'` to logits over the full registry; illegal
//! tokens are masked before the softmax.
//!
//! With [`Topology::Tree`] the incoming state follows the tree: a
//! connector's first branch reads the connector's state, later branches
//! read the previous sibling's first decision, and sequence steps read the
//! step before. [`Topology::Chain`] reads the previous decision in sampling
//! order, which is a plain sequence model.

mod grad;
mod sample;
#[cfg(test)]
mod tests_sampling;

pub use grad::{evaluate, kl_and_grad, kl_divergence, log_prob_and_grad, objective_and_grad, Evaluation};
pub use sample::{sample, SampledSkeleton, Step};

use crate::error::ControllerError;
use crate::expr::{DEFAULT_MAX_DEPTH, DEFAULT_MAX_WIDTH};
use crate::grammar::{registry, N_TOKENS};
use rand::Rng;
use serde_json::{json, Map, Value};

pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_MAX_LEAVES: usize = 6;
pub const INIT_SCALE: f64 = 0.08;
pub const N_HEADS: usize = 4;
const HEAD_NAMES: [&str; N_HEADS] = ["root", "connector", "sequence", "leaf"];
/// Parent slots: every token plus the root marker.
const PARENT_SLOTS: usize = N_TOKENS + 1;
/// Sibling slots: every token plus null.
const SIBLING_SLOTS: usize = N_TOKENS + 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topology {
    #[default]
    Tree,
    Chain,
}

impl Topology {
    pub fn name(self) -> &'static str {
        match self {
            Topology::Tree => "tree",
            Topology::Chain => "chain",
        }
    }

    pub fn from_name(s: &str) -> Option<Topology> {
        match s {
            "tree" => Some(Topology::Tree),
            "chain" => Some(Topology::Chain),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControllerConfig {
    pub hidden: usize,
    pub max_depth: usize,
    pub max_width: usize,
    /// Cap on the number of leaves in one skeleton.
    pub max_leaves: usize,
    pub topology: Topology,
    /// Adds `ln P*` to the logits so an untrained policy samples from the
    /// prior.
    pub prior_logit_bias: bool,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            hidden: DEFAULT_HIDDEN,
            max_depth: DEFAULT_MAX_DEPTH,
            max_width: DEFAULT_MAX_WIDTH,
            max_leaves: DEFAULT_MAX_LEAVES,
            topology: Topology::Tree,
            prior_logit_bias: true,
        }
    }
}

/// Offsets of each weight block inside the flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub hidden: usize,
    pub input: usize,
    pub gate_input: usize,
    pub gate_hidden: usize,
    pub gate_bias: usize,
    pub cand_input: usize,
    pub cand_hidden: usize,
    pub cand_bias: usize,
    /// `(weight, bias)` offsets per head.
    pub heads: [(usize, usize); N_HEADS],
    pub len: usize,
}

impl Layout {
    pub fn new(hidden: usize, max_level: usize) -> Layout {
        let input = PARENT_SLOTS + SIBLING_SLOTS + max_level + 1;
        let mut at = 0;
        let mut take = |n: usize| {
            let o = at;
            at += n;
            o
        };
        let gate_input = take(hidden * input);
        let gate_hidden = take(hidden * hidden);
        let gate_bias = take(hidden);
        let cand_input = take(hidden * input);
        let cand_hidden = take(hidden * hidden);
        let cand_bias = take(hidden);
        let heads = std::array::from_fn(|_| (take(N_TOKENS * hidden), take(N_TOKENS)));
        Layout {
            hidden,
            input,
            gate_input,
            gate_hidden,
            gate_bias,
            cand_input,
            cand_hidden,
            cand_bias,
            heads,
            len: at,
        }
    }

    /// Named blocks as `(name, offset, rows, cols)`, row-major.
    pub fn blocks(&self) -> Vec<(String, usize, usize, usize)> {
        let (h, d) = (self.hidden, self.input);
        let mut v = vec![
            ("gate.input".to_string(), self.gate_input, h, d),
            ("gate.hidden".to_string(), self.gate_hidden, h, h),
            ("gate.bias".to_string(), self.gate_bias, h, 1),
            ("candidate.input".to_string(), self.cand_input, h, d),
            ("candidate.hidden".to_string(), self.cand_hidden, h, h),
            ("candidate.bias".to_string(), self.cand_bias, h, 1),
        ];
        for (name, (w, b)) in HEAD_NAMES.iter().zip(self.heads) {
            v.push((format!("head.{name}.weight"), w, N_TOKENS, h));
            v.push((format!("head.{name}.bias"), b, N_TOKENS, 1));
        }
        v
    }

    /// Active input slots for a decision.
    pub fn encode(&self, parent: Option<usize>, sibling: Option<usize>, level: usize) -> [usize; 3] {
        let max_level = self.input - PARENT_SLOTS - SIBLING_SLOTS - 1;
        [
            parent.unwrap_or(N_TOKENS),
            PARENT_SLOTS + sibling.unwrap_or(N_TOKENS),
            PARENT_SLOTS + SIBLING_SLOTS + level.min(max_level),
        ]
    }
}

/// Learnable policy parameters in one flat vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ControllerParams {
    pub layout: Layout,
    pub weights: Vec<f64>,
}

impl ControllerParams {
    pub fn zeros(hidden: usize, max_level: usize) -> Self {
        let layout = Layout::new(hidden, max_level);
        ControllerParams {
            weights: vec![0.0; layout.len],
            layout,
        }
    }

    /// Uniform weights in `[-INIT_SCALE, INIT_SCALE]`.
    pub fn init(hidden: usize, max_level: usize, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(hidden, max_level);
        p.weights
            .iter_mut()
            .for_each(|w| *w = rng.random_range(-INIT_SCALE..=INIT_SCALE));
        p
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn max_level(&self) -> usize {
        self.layout.input - PARENT_SLOTS - SIBLING_SLOTS - 1
    }

    pub fn to_checkpoint(&self, topology: Topology) -> Value {
        let mut weights = Map::new();
        for (name, off, r, c) in self.layout.blocks() {
            weights.insert(name, json!(&self.weights[off..off + r * c]));
        }
        json!({
            "registry": registry(),
            "hidden": self.layout.hidden,
            "input": self.layout.input,
            "max_level": self.max_level(),
            "topology": topology.name(),
            "weights": weights,
        })
    }

    pub fn from_checkpoint(v: &Value) -> Result<(Self, Topology), ControllerError> {
        let bad = |m: &str| ControllerError::Checkpoint(m.to_string());
        let reg: Vec<&str> = v["registry"]
            .as_array()
            .ok_or_else(|| bad("missing registry"))?
            .iter()
            .map(|s| s.as_str().unwrap_or(""))
            .collect();
        if reg != registry() {
            return Err(ControllerError::Mismatch(format!("checkpoint registry {reg:?}")));
        }
        let hidden = v["hidden"].as_u64().ok_or_else(|| bad("missing hidden"))? as usize;
        let max_level = v["max_level"].as_u64().ok_or_else(|| bad("missing max_level"))? as usize;
        let topology = v["topology"]
            .as_str()
            .and_then(Topology::from_name)
            .ok_or_else(|| bad("bad topology"))?;
        let mut p = Self::zeros(hidden, max_level);
        if v["input"].as_u64() != Some(p.layout.input as u64) {
            return Err(bad("input size does not match max_level"));
        }
        for (name, off, r, c) in p.layout.blocks() {
            let arr = v["weights"][name.as_str()]
                .as_array()
                .ok_or_else(|| ControllerError::Checkpoint(format!("missing block {name}")))?;
            if arr.len() != r * c {
                return Err(ControllerError::Checkpoint(format!(
                    "block {name} has {} entries, expected {}",
                    arr.len(),
                    r * c
                )));
            }
            for (dst, x) in p.weights[off..off + r * c].iter_mut().zip(arr) {
                *dst = x
                    .as_f64()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| ControllerError::Checkpoint(format!("non-finite entry in {name}")))?;
            }
        }
        Ok((p, topology))
    }
}
