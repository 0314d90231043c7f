//! Risk-seeking, KL-regularized policy-gradient updates.

use crate::controller::{objective_and_grad, sample, ControllerConfig, ControllerParams, SampledSkeleton};
use crate::error::ControllerError;
use crate::par::{self, Execution};
use crate::priors::PriorModel;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{risk_quantile, PolicyOptimizer};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Summary of one policy update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateStats {
    /// Risk quantile used as the baseline.
    pub threshold: f64,
    /// Samples passing the risk filter.
    pub selected: usize,
    /// Batch mean of the per-node KL from the prior to the policy.
    pub kl_avg: f64,
    /// Euclidean norm of the ascent direction.
    pub grad_norm: f64,
}

/// Owns the controller weights and their optimizer state.
#[derive(Clone, Debug)]
pub struct PolicyTrainer {
    pub params: ControllerParams,
    pub controller: ControllerConfig,
    pub learning_rate: f64,
    pub risk_alpha: f64,
    pub optimizer: PolicyOptimizer,
    pub execution: Execution,
    seed: u64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    updates: usize,
}

/// Independent stream per `(iteration, sample)` so batches do not depend on
/// the execution schedule.
pub fn sample_rng(seed: u64, iteration: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((iteration as u64) << 32) | index as u64);
    rng
}

impl PolicyTrainer {
    pub fn new(
        controller: ControllerConfig,
        learning_rate: f64,
        risk_alpha: f64,
        optimizer: PolicyOptimizer,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX);
        let params = ControllerParams::init(controller.hidden, controller.max_depth, &mut rng);
        let n = params.len();
        PolicyTrainer {
            params,
            controller,
            learning_rate,
            risk_alpha,
            optimizer,
            execution: Execution::default(),
            seed,
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
            updates: 0,
        }
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    pub fn sample_batch(
        &self,
        prior: &PriorModel,
        iteration: usize,
        size: usize,
        n_vars: usize,
    ) -> Vec<SampledSkeleton> {
        par::map_range(self.execution, size, |i| {
            let mut rng = sample_rng(self.seed, iteration, i);
            sample(&self.params, prior, &self.controller, n_vars, &mut rng)
        })
    }

    /// One ascent step on
    /// `(1/N) sum (R - q) 1[R >= q] log p  -  (kl_weight/N) sum KL_avg`.
    pub fn update(
        &mut self,
        batch: &[SampledSkeleton],
        rewards: &[f64],
        kl_weight: f64,
    ) -> Result<UpdateStats, ControllerError> {
        if batch.len() != rewards.len() || batch.is_empty() {
            return Err(ControllerError::Mismatch(format!(
                "{} samples with {} rewards",
                batch.len(),
                rewards.len()
            )));
        }
        let n = batch.len() as f64;
        let (threshold, passes) = risk_quantile(rewards, self.risk_alpha);
        let jobs: Vec<usize> = (0..batch.len()).collect();
        let params = &self.params;
        let results = par::map(self.execution, &jobs, |&i| {
            let w_log_prob = if passes[i] { (rewards[i] - threshold) / n } else { 0.0 };
            objective_and_grad(params, &batch[i], None, w_log_prob, -kl_weight / n)
        });
        let mut grad = vec![0.0; self.params.len()];
        let mut kl_total = 0.0;
        for r in results {
            let (eval, g) = r?;
            kl_total += eval.kl_avg;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        self.ascend(&grad);
        Ok(UpdateStats {
            threshold,
            selected: passes.iter().filter(|&&p| p).count(),
            kl_avg: kl_total / n,
            grad_norm,
        })
    }

    fn ascend(&mut self, grad: &[f64]) {
        self.updates += 1;
        let eta = self.learning_rate;
        match self.optimizer {
            PolicyOptimizer::Sgd => {
                self.params.weights.iter_mut().zip(grad).for_each(|(w, g)| *w += eta * g);
            }
            PolicyOptimizer::Adam => {
                let t = self.updates as i32;
                let c1 = 1.0 - ADAM_BETA1.powi(t);
                let c2 = 1.0 - ADAM_BETA2.powi(t);
                for (i, &g) in grad.iter().enumerate() {
                    let m = &mut self.first_moment[i];
                    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                    let v = &mut self.second_moment[i];
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    self.params.weights[i] += eta * (self.first_moment[i] / c1)
                        / ((self.second_moment[i] / c2).sqrt() + ADAM_EPS);
                }
            }
        }
    }
}
