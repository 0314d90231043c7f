//! Policy-gradient search over skeletons.
//!
//! Each outer iteration samples a batch of skeletons from the controller,
//! fits their constants, scores them with `1 / (1 + NRMSE)`, offers them
//! to a top-K pool and takes one risk-seeking, KL-regularized ascent step
//! on the controller. At the end every pool member is fine-tuned and the
//! one with the smallest training NRMSE is returned.

mod policy;
mod pool;

pub use policy::{sample_rng, PolicyTrainer, UpdateStats};
pub use pool::{CandidatePool, PoolEntry};

use crate::controller::{ControllerConfig, Topology, DEFAULT_HIDDEN, DEFAULT_MAX_LEAVES};
use crate::data::Dataset;
use crate::error::SearchError;
use crate::expr::{canonical_serialize, ExpressionTree, DEFAULT_MAX_DEPTH, DEFAULT_MAX_WIDTH};
use crate::optimize::{coarse_tune, fine_tune, FitConfig, FitResult};
use crate::par::{self, Execution};
use crate::priors::PriorModel;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::{BTreeSet, HashMap};

/// `1 / (1 + nrmse)`; non-finite or negative inputs score 0.
pub fn reward(nrmse: f64) -> f64 {
    if nrmse.is_nan() || nrmse < 0.0 {
        0.0
    } else {
        1.0 / (1.0 + nrmse)
    }
}

/// Empirical `(1 - alpha)` quantile and the indicator `R >= quantile`.
///
/// The threshold is the `m`-th largest reward with `m = max(1, ceil(alpha n))`,
/// so at least the top `m` samples pass; ties at the threshold also pass.
/// `alpha` is clamped to `[0, 1]`. An empty batch gives `(NaN, [])`.
pub fn risk_quantile(rewards: &[f64], alpha: f64) -> (f64, Vec<bool>) {
    let n = rewards.len();
    if n == 0 {
        return (f64::NAN, Vec::new());
    }
    let alpha = alpha.clamp(0.0, 1.0);
    let m = ((alpha * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    let mut sorted = rewards.to_vec();
    sorted.sort_by(f64::total_cmp);
    let threshold = sorted[n - m];
    let passes = rewards.iter().map(|&r| r >= threshold).collect();
    (threshold, passes)
}

/// `ell0 * exp(-lambda_d * t)`.
pub fn kl_weight(t: usize, ell0: f64, lambda_d: f64) -> f64 {
    ell0 * (-lambda_d * t as f64).exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyOptimizer {
    #[default]
    Adam,
    Sgd,
}

/// Search settings. Every field has a default, so a config file only needs
/// the keys it changes; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Outer iterations.
    pub iterations: usize,
    /// Skeletons sampled per iteration.
    pub batch_size: usize,
    /// Pool capacity.
    pub pool_size: usize,
    /// Policy step size.
    pub learning_rate: f64,
    pub risk_alpha: f64,
    /// Initial KL weight.
    pub ell0: f64,
    /// KL weight decay rate per iteration.
    pub lambda_d: f64,
    /// First-order constant-fitting steps per restart.
    pub adam_steps: usize,
    /// Quasi-Newton steps per restart, spent once on the projected
    /// parameters and once more on all of them.
    pub bfgs_steps: usize,
    /// Quasi-Newton steps when fine-tuning the pool.
    pub fine_steps: usize,
    pub restarts: usize,
    pub hidden: usize,
    pub max_depth: usize,
    pub max_width: usize,
    pub max_leaves: usize,
    pub topology: Topology,
    /// Offset the policy logits by the log prior.
    pub prior_logit_bias: bool,
    pub policy_optimizer: PolicyOptimizer,
    /// Stop once the pool's best NRMSE reaches this; 0 disables.
    pub early_stop_nrmse: f64,
    /// Fit constants during the search on this many evenly spaced rows;
    /// fine-tuning always uses every row.
    pub coarse_rows: Option<usize>,
    pub seed: u64,
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for SearchConfig {
    fn default() -> Self {
        let fit = FitConfig::default();
        SearchConfig {
            iterations: 50,
            batch_size: 200,
            pool_size: 10,
            learning_rate: 0.003,
            risk_alpha: 0.05,
            ell0: 0.5,
            lambda_d: 0.01,
            adam_steps: fit.adam_steps,
            bfgs_steps: fit.bfgs_steps,
            fine_steps: fit.fine_steps,
            restarts: fit.restarts,
            hidden: DEFAULT_HIDDEN,
            max_depth: DEFAULT_MAX_DEPTH,
            max_width: DEFAULT_MAX_WIDTH,
            max_leaves: DEFAULT_MAX_LEAVES,
            topology: Topology::Tree,
            prior_logit_bias: true,
            policy_optimizer: PolicyOptimizer::Adam,
            early_stop_nrmse: 1e-6,
            coarse_rows: None,
            seed: 0,
            execution: Execution::default(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        let bad = |m: &str| Err(SearchError::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.pool_size == 0 {
            return bad("pool_size must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.risk_alpha) {
            return bad("risk_alpha must lie in [0, 1]");
        }
        if !(self.ell0 >= 0.0 && self.ell0.is_finite()) {
            return bad("ell0 must be finite and non-negative");
        }
        if !(self.lambda_d >= 0.0 && self.lambda_d.is_finite()) {
            return bad("lambda_d must be finite and non-negative");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if self.hidden == 0 {
            return bad("hidden must be at least 1");
        }
        if self.max_depth < 2 {
            return bad("max_depth must be at least 2");
        }
        if self.max_width < 2 {
            return bad("max_width must be at least 2");
        }
        if self.max_leaves == 0 {
            return bad("max_leaves must be at least 1");
        }
        if self.coarse_rows.is_some_and(|r| r < 2) {
            return bad("coarse_rows must be at least 2");
        }
        if !(self.early_stop_nrmse >= 0.0) {
            return bad("early_stop_nrmse must be non-negative");
        }
        Ok(())
    }

    pub fn controller(&self) -> ControllerConfig {
        ControllerConfig {
            hidden: self.hidden,
            max_depth: self.max_depth,
            max_width: self.max_width,
            max_leaves: self.max_leaves,
            topology: self.topology,
            prior_logit_bias: self.prior_logit_bias,
        }
    }

    pub fn fit(&self) -> FitConfig {
        FitConfig {
            adam_steps: self.adam_steps,
            bfgs_steps: self.bfgs_steps,
            fine_steps: self.fine_steps,
            restarts: self.restarts,
            ..FitConfig::default()
        }
    }
}

/// Per-iteration statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationStats {
    pub iteration: usize,
    pub mean_reward: f64,
    pub max_reward: f64,
    pub kl_avg: f64,
    pub kl_weight: f64,
    pub threshold: f64,
    pub selected: usize,
    pub unique_skeletons: usize,
    pub new_fits: usize,
    pub invalid: usize,
    pub pool_best_nrmse: f64,
    /// Whether the policy was updated this iteration.
    pub updated: bool,
}

impl IterationStats {
    fn to_json(&self) -> Value {
        json!({
            "iteration": self.iteration,
            "mean_reward": self.mean_reward,
            "max_reward": self.max_reward,
            "kl_avg": self.kl_avg,
            "kl_weight": self.kl_weight,
            "threshold": self.threshold,
            "selected": self.selected,
            "unique_skeletons": self.unique_skeletons,
            "new_fits": self.new_fits,
            "invalid": self.invalid,
            "pool_best_nrmse": self.pool_best_nrmse,
            "updated": self.updated,
        })
    }
}

/// The returned expression after fine-tuning.
#[derive(Clone, Debug, PartialEq)]
pub struct BestExpression {
    pub tree: ExpressionTree,
    pub theta: Vec<f64>,
    /// Training NRMSE after fine-tuning.
    pub nrmse: f64,
    pub skeleton: String,
}

impl BestExpression {
    pub fn to_json(&self) -> Value {
        let canonical: Value =
            serde_json::from_str(&canonical_serialize(&self.tree)).expect("serializer emits valid JSON");
        json!({
            "expression": canonical,
            "infix": self.tree.to_string(),
            "skeleton": self.skeleton,
            "theta": self.theta,
            "nrmse": self.nrmse,
        })
    }
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub best: BestExpression,
    pub history: Vec<IterationStats>,
    /// Pool before fine-tuning.
    pub pool: CandidatePool,
    /// Fine-tuned NRMSE per pool entry, in pool order.
    pub fine_nrmse: Vec<f64>,
    pub early_stopped: bool,
    pub sampled: usize,
}

impl SearchOutcome {
    /// Report with config, history and pool. Contains no timings, so it is
    /// byte-identical across repeated runs.
    pub fn report(&self, config: &SearchConfig) -> Value {
        let pool: Vec<Value> = self
            .pool
            .entries()
            .iter()
            .zip(&self.fine_nrmse)
            .map(|(e, f)| {
                let mut v = e.to_json();
                v["fine_nrmse"] = json!(f);
                v
            })
            .collect();
        json!({
            "config": config,
            "iterations": self.history.iter().map(IterationStats::to_json).collect::<Vec<_>>(),
            "early_stopped": self.early_stopped,
            "sampled": self.sampled,
            "pool": pool,
            "best": self.best.to_json(),
        })
    }
}

/// 64-bit FNV-1a.
fn fnv1a(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Evenly spaced row subset, or `None` when every row is used.
fn coarse_subset(data: &Dataset, rows: Option<usize>) -> Option<Dataset> {
    let n = data.rows();
    let k = rows?;
    if k >= n {
        return None;
    }
    let idx: Vec<usize> = (0..k).map(|i| i * n / k).collect();
    Some(data.select(&idx))
}

/// Fits a skeleton's constants with a stream that depends only on the
/// skeleton and the run seed.
fn fit_skeleton(tree: &ExpressionTree, key: &str, data: &Dataset, fit: &FitConfig, seed: u64) -> Option<FitResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(key) ^ seed.rotate_left(17));
    match coarse_tune(tree, data, fit, &mut rng) {
        Ok(r) => Some(r),
        Err(e) => {
            log::debug!("fit failed for {key}: {e}");
            None
        }
    }
}

/// Runs the search. `prior` drives both the sampling masks and the KL
/// regularizer.
pub fn run(config: &SearchConfig, data: &Dataset, prior: &PriorModel) -> Result<SearchOutcome, SearchError> {
    let mut trainer = PolicyTrainer::new(
        config.controller(),
        config.learning_rate,
        config.risk_alpha,
        config.policy_optimizer,
        config.seed,
    );
    run_with(config, data, prior, &mut trainer)
}

/// [`run`] with a caller-supplied trainer, for warm starts and inspection.
pub fn run_with(
    config: &SearchConfig,
    data: &Dataset,
    prior: &PriorModel,
    trainer: &mut PolicyTrainer,
) -> Result<SearchOutcome, SearchError> {
    config.validate()?;
    if data.rows() < 2 {
        return Err(SearchError::TooFewRows(data.rows()));
    }
    if data.n_vars() == 0 {
        return Err(SearchError::Config("dataset has no input columns".into()));
    }
    trainer.execution = config.execution;
    let fit_cfg = config.fit();
    let coarse = coarse_subset(data, config.coarse_rows);
    let fit_data = coarse.as_ref().unwrap_or(data);
    let mut cache: HashMap<String, Option<FitResult>> = HashMap::new();
    let mut pool = CandidatePool::new(config.pool_size);
    let mut history = Vec::new();
    let mut sampled = 0;
    let mut invalid_total = 0;
    let mut early_stopped = false;

    for t in 0..config.iterations {
        let batch = trainer.sample_batch(prior, t, config.batch_size, data.n_vars());
        let keys: Vec<String> = batch.iter().map(|s| s.tree.skeleton_key()).collect();
        let unique: BTreeSet<&str> = keys.iter().map(String::as_str).collect();
        let mut pending: Vec<usize> = Vec::new();
        let mut seen_new = BTreeSet::new();
        for (i, k) in keys.iter().enumerate() {
            if !cache.contains_key(k) && seen_new.insert(k.as_str()) {
                pending.push(i);
            }
        }
        let fits = par::map(config.execution, &pending, |&i| {
            fit_skeleton(&batch[i].tree, &keys[i], fit_data, &fit_cfg, config.seed)
        });
        let new_fits = pending.len();
        for (&i, f) in pending.iter().zip(fits) {
            cache.insert(keys[i].clone(), f);
        }

        let mut rewards = Vec::with_capacity(batch.len());
        let mut invalid = 0;
        for (i, (skel, key)) in batch.iter().zip(&keys).enumerate() {
            let fit = cache[key].as_ref();
            let nrmse = fit.map_or(f64::INFINITY, |f| f.nrmse);
            if !nrmse.is_finite() {
                invalid += 1;
            }
            let r = reward(nrmse);
            rewards.push(r);
            if let Some(f) = fit.filter(|f| f.nrmse.is_finite()) {
                if let Ok(tree) = f.tree(&skel.tree) {
                    pool.offer(PoolEntry {
                        key: key.clone(),
                        nodes: tree.node_count(),
                        tree,
                        theta: f.theta.clone(),
                        nrmse: f.nrmse,
                        reward: r,
                        discovered: sampled + i,
                    });
                }
            }
        }
        sampled += batch.len();
        invalid_total += invalid;

        let weight = kl_weight(t, config.ell0, config.lambda_d);
        let pool_best = pool.best().map_or(f64::INFINITY, |e| e.nrmse);
        let stop = config.early_stop_nrmse > 0.0 && pool_best <= config.early_stop_nrmse;
        let stats = if stop {
            None
        } else {
            Some(trainer.update(&batch, &rewards, weight)?)
        };
        let kl_avg = match stats {
            Some(s) => s.kl_avg,
            None => batch_kl(trainer, &batch)?,
        };
        let (threshold, _) = risk_quantile(&rewards, config.risk_alpha);
        let entry = IterationStats {
            iteration: t,
            mean_reward: rewards.iter().sum::<f64>() / rewards.len() as f64,
            max_reward: rewards.iter().cloned().fold(0.0, f64::max),
            kl_avg,
            kl_weight: weight,
            threshold,
            selected: rewards.iter().filter(|&&r| r >= threshold).count(),
            unique_skeletons: unique.len(),
            new_fits,
            invalid,
            pool_best_nrmse: pool_best,
            updated: stats.is_some(),
        };
        log::info!(
            "iteration {t}: mean reward {:.4}, max {:.4}, KL {:.4}, weight {:.4}, best NRMSE {:.3e}, {} new fits",
            entry.mean_reward,
            entry.max_reward,
            entry.kl_avg,
            entry.kl_weight,
            entry.pool_best_nrmse,
            entry.new_fits
        );
        history.push(entry);
        if stop {
            log::info!("stopping early: best NRMSE {pool_best:.3e}");
            early_stopped = true;
            break;
        }
    }

    if pool.is_empty() {
        return Err(SearchError::EmptyPool {
            iterations: history.len(),
            sampled,
            invalid: invalid_total,
        });
    }
    let tuned = par::map(config.execution, pool.entries(), |e| {
        fine_tune(&e.tree, data, &e.theta, config.fine_steps, &fit_cfg)
    });
    let mut fine_nrmse = Vec::with_capacity(tuned.len());
    let mut best: Option<(usize, FitResult)> = None;
    for (i, r) in tuned.into_iter().enumerate() {
        let r = r?;
        fine_nrmse.push(r.nrmse);
        if best.as_ref().is_none_or(|(_, b)| r.nrmse < b.nrmse) {
            best = Some((i, r));
        }
    }
    let (i, fit) = best.expect("pool is non-empty");
    let entry = &pool.entries()[i];
    let tree = entry.tree.with_parameters(&fit.theta)?;
    let (theta, nrmse) = (fit.theta, fit.nrmse);
    Ok(SearchOutcome {
        best: BestExpression {
            skeleton: entry.key.clone(),
            tree,
            theta,
            nrmse,
        },
        history,
        pool,
        fine_nrmse,
        early_stopped,
        sampled,
    })
}

fn batch_kl(trainer: &PolicyTrainer, batch: &[crate::controller::SampledSkeleton]) -> Result<f64, SearchError> {
    let evals = par::map(trainer.execution, batch, |s| crate::controller::evaluate(&trainer.params, s));
    let mut total = 0.0;
    for e in evals {
        total += e?.kl_avg;
    }
    Ok(total / batch.len() as f64)
}
