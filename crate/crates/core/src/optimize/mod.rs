//! Fitting the continuous parameters of a fixed skeleton.
//!
//! The objective is NRMSE = RMSE / (std(y) + 1e-12). Internally the
//! optimizers work on its square, which has the same minimizers and a
//! smoother landscape at zero; reported values and gradients are for NRMSE
//! itself.

mod bfgs;
mod projected;

pub use bfgs::bfgs;
pub use projected::Projected;

use crate::data::Dataset;
use crate::error::ExprError;
use crate::expr::{ExpressionTree, Program, Tail, Workspace};
use rand::Rng;

pub const STD_FLOOR: f64 = 1e-12;

/// A scalar objective with a gradient, minimized by [`bfgs`] and Adam.
pub trait Smooth {
    fn loss(&mut self, theta: &[f64]) -> f64;
    fn loss_and_grad(&mut self, theta: &[f64], grad: &mut [f64]) -> f64;
}

impl Smooth for Objective<'_> {
    fn loss(&mut self, theta: &[f64]) -> f64 {
        Objective::loss(self, theta)
    }

    fn loss_and_grad(&mut self, theta: &[f64], grad: &mut [f64]) -> f64 {
        Objective::loss_and_grad(self, theta, grad)
    }
}

/// RMSE over `std(targets)`; `+inf` when any prediction is non-finite.
pub fn nrmse(predictions: &[f64], targets: &[f64]) -> Result<f64, ExprError> {
    if predictions.len() != targets.len() {
        return Err(ExprError::ParameterCount {
            expected: targets.len(),
            found: predictions.len(),
        });
    }
    if targets.len() < 2 {
        return Err(ExprError::Structure {
            position: "$".into(),
            message: format!("nrmse needs at least 2 rows, found {}", targets.len()),
        });
    }
    if predictions.iter().any(|p| !p.is_finite()) {
        return Ok(f64::INFINITY);
    }
    let n = targets.len() as f64;
    let mse = predictions
        .iter()
        .zip(targets)
        .map(|(p, y)| (p - y) * (p - y))
        .sum::<f64>()
        / n;
    let v = mse.sqrt() / (std_dev(targets) + STD_FLOOR);
    Ok(if v.is_finite() { v } else { f64::INFINITY })
}

/// Population standard deviation.
pub fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}

/// Squared NRMSE of a compiled tree against fixed data, with gradients.
pub struct Objective<'a> {
    program: Program,
    x: &'a [Vec<f64>],
    y: &'a [f64],
    scale: f64,
    ws: Workspace,
    residual: Vec<f64>,
}

impl<'a> Objective<'a> {
    pub fn new(tree: &ExpressionTree, data: &'a Dataset) -> Result<Self, ExprError> {
        tree.check_variables(data.n_vars())?;
        let s = std_dev(&data.y) + STD_FLOOR;
        Ok(Objective {
            program: Program::compile(tree),
            x: &data.x,
            y: &data.y,
            scale: 1.0 / (data.rows() as f64 * s * s),
            ws: Workspace::default(),
            residual: Vec::new(),
        })
    }

    pub fn n_params(&self) -> usize {
        self.program.n_params()
    }

    /// Squared NRMSE, `+inf` when any row is non-finite.
    pub fn loss(&mut self, theta: &[f64]) -> f64 {
        let out = self.program.forward(theta, self.x, &mut self.ws);
        let mut sum = 0.0;
        for (p, y) in out.iter().zip(self.y) {
            let r = p - y;
            sum += r * r;
        }
        let l = sum * self.scale;
        if l.is_finite() {
            l
        } else {
            f64::INFINITY
        }
    }

    /// Squared NRMSE and its gradient; the gradient is meaningless when the
    /// loss is infinite.
    pub fn loss_and_grad(&mut self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let out = self.program.forward(theta, self.x, &mut self.ws);
        self.residual.clear();
        let mut sum = 0.0;
        for (p, y) in out.iter().zip(self.y) {
            let r = p - y;
            sum += r * r;
            self.residual.push(2.0 * r * self.scale);
        }
        let l = sum * self.scale;
        if !l.is_finite() {
            return f64::INFINITY;
        }
        let seed = std::mem::take(&mut self.residual);
        self.program.backward(theta, self.x, &mut self.ws, &seed, grad);
        self.residual = seed;
        l
    }

    pub fn nrmse(&mut self, theta: &[f64]) -> f64 {
        self.loss(theta).sqrt()
    }

    /// NRMSE and its gradient.
    pub fn nrmse_and_grad(&mut self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let l = self.loss_and_grad(theta, grad);
        let v = l.sqrt();
        if v > 0.0 && v.is_finite() {
            grad.iter_mut().for_each(|g| *g /= 2.0 * v);
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitConfig {
    /// First-order steps per restart.
    pub adam_steps: usize,
    /// Quasi-Newton steps per restart, spent once on the projected
    /// parameters and once more on all of them.
    pub bfgs_steps: usize,
    /// Quasi-Newton steps for the fine tune.
    pub fine_steps: usize,
    pub restarts: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub armijo: f64,
    /// Remaining restarts are skipped once a fit reaches this NRMSE.
    pub good_enough: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            adam_steps: 0,
            bfgs_steps: 50,
            fine_steps: 1000,
            restarts: 8,
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            armijo: 1e-4,
            good_enough: 1e-10,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitResult {
    /// Parameters in [`ExpressionTree::parameters`] order.
    pub theta: Vec<f64>,
    pub nrmse: f64,
    pub converged: bool,
    pub adam_iterations: usize,
    pub bfgs_iterations: usize,
}

impl FitResult {
    pub fn tree(&self, skeleton: &ExpressionTree) -> Result<ExpressionTree, ExprError> {
        skeleton.with_parameters(&self.theta)
    }
}

/// Half-width of the uniform draw for leaf coefficients.
pub const INIT_GAMMA: f64 = 2.0;

/// `alpha = 1`, `beta = 0`, and leaf coefficients uniform in
/// `[-INIT_GAMMA, INIT_GAMMA]`.
pub fn initial_theta(tree: &ExpressionTree, rng: &mut impl Rng) -> Vec<f64> {
    fn walk(t: &mut Tail, rng: &mut impl Rng) {
        match t {
            Tail::Leaf(l) => l.gamma.iter_mut().for_each(|g| *g = rng.random_range(-INIT_GAMMA..=INIT_GAMMA)),
            Tail::Connector(c) => {
                for b in &mut c.branches {
                    for a in &mut b.ops {
                        a.alpha = 1.0;
                        a.beta = 0.0;
                    }
                    walk(&mut b.tail, rng);
                }
            }
        }
    }
    let mut t = tree.clone();
    t.root.alpha = 1.0;
    t.root.beta = 0.0;
    walk(&mut t.body, rng);
    t.parameters()
}

/// Adam on squared NRMSE from `theta`; returns the best iterate and its loss.
fn adam(obj: &mut impl Smooth, theta: &[f64], steps: usize, cfg: &FitConfig) -> (Vec<f64>, f64, usize) {
    let n = theta.len();
    let mut x = theta.to_vec();
    let mut g = vec![0.0; n];
    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut best = (x.clone(), obj.loss(&x));
    let mut done = 0;
    for t in 1..=steps {
        let l = obj.loss_and_grad(&x, &mut g);
        if !l.is_finite() {
            break;
        }
        if l < best.1 {
            best = (x.clone(), l);
        }
        if l == 0.0 {
            break;
        }
        let (b1, b2) = (cfg.beta1, cfg.beta2);
        let c1 = 1.0 - b1.powi(t as i32);
        let c2 = 1.0 - b2.powi(t as i32);
        for i in 0..n {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            x[i] -= cfg.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + 1e-8);
        }
        done = t;
    }
    let l = obj.loss(&x);
    if l < best.1 {
        best = (x, l);
    }
    (best.0, best.1, done)
}

/// Multi-start fit. Each restart draws leaf coefficients, runs Adam then
/// BFGS on the parameters left after projecting out the outer linear
/// coefficients, and polishes all parameters with BFGS when the restart
/// beats the best so far.
pub fn coarse_tune(
    tree: &ExpressionTree,
    data: &Dataset,
    cfg: &FitConfig,
    rng: &mut impl Rng,
) -> Result<FitResult, ExprError> {
    let mut obj = Objective::new(tree, data)?;
    let mut best: Option<FitResult> = None;
    for _ in 0..cfg.restarts.max(1) {
        let start = initial_theta(tree, rng);
        let (projected, adam_iterations, projected_iterations) = {
            let mut proj = Projected::new(&mut obj, &start);
            let free = proj.free();
            let (z, _, adam_iterations) = adam(&mut proj, &free, cfg.adam_steps, cfg);
            let out = bfgs(&mut proj, &z, cfg.bfgs_steps, cfg.armijo);
            proj.loss(&out.theta);
            (proj.theta().to_vec(), adam_iterations, out.iterations)
        };
        let projected_loss = obj.loss(&projected);
        if best.as_ref().is_some_and(|b| projected_loss.sqrt() >= b.nrmse) {
            continue;
        }
        let out = bfgs(&mut obj, &projected, cfg.bfgs_steps, cfg.armijo);
        let fit = FitResult {
            nrmse: out.loss.sqrt(),
            theta: out.theta,
            converged: out.converged,
            adam_iterations,
            bfgs_iterations: projected_iterations + out.iterations,
        };
        let better = best.as_ref().is_none_or(|b| fit.nrmse < b.nrmse);
        if better {
            best = Some(fit);
        }
        if best.as_ref().is_some_and(|b| b.nrmse <= cfg.good_enough) {
            break;
        }
    }
    Ok(best.expect("at least one restart runs"))
}

/// BFGS from `theta` for `steps` iterations; never worse than the start.
pub fn fine_tune(
    tree: &ExpressionTree,
    data: &Dataset,
    theta: &[f64],
    steps: usize,
    cfg: &FitConfig,
) -> Result<FitResult, ExprError> {
    let mut obj = Objective::new(tree, data)?;
    if theta.len() != obj.n_params() {
        return Err(ExprError::ParameterCount {
            expected: obj.n_params(),
            found: theta.len(),
        });
    }
    let out = bfgs(&mut obj, theta, steps, cfg.armijo);
    Ok(FitResult {
        nrmse: out.loss.sqrt(),
        theta: out.theta,
        converged: out.converged,
        adam_iterations: 0,
        bfgs_iterations: out.iterations,
    })
}
