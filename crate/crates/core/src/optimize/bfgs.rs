//! BFGS with a dense inverse-Hessian approximation and Armijo backtracking.

use super::Smooth;

pub struct BfgsOutcome {
    pub theta: Vec<f64>,
    /// Best squared NRMSE seen.
    pub loss: f64,
    pub iterations: usize,
    pub converged: bool,
}

const MAX_HALVINGS: usize = 40;
const GRAD_TOL: f64 = 1e-14;
/// Relative decrease below which a step counts as stalled.
const STALL_TOL: f64 = 1e-10;
/// Consecutive stalled steps that end the run.
const STALL_STEPS: usize = 3;

pub fn bfgs(obj: &mut impl Smooth, start: &[f64], steps: usize, armijo: f64) -> BfgsOutcome {
    let n = start.len();
    let mut x = start.to_vec();
    let mut g = vec![0.0; n];
    let mut f = obj.loss_and_grad(&x, &mut g);
    if !f.is_finite() || steps == 0 {
        return BfgsOutcome {
            theta: x,
            loss: f,
            iterations: 0,
            converged: false,
        };
    }
    let mut h = identity(n);
    let mut fresh = true;
    let mut g_new = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;
    let mut stalled = 0;
    while iterations < steps {
        if f == 0.0 || g.iter().all(|v| v.abs() < GRAD_TOL) {
            converged = true;
            break;
        }
        for i in 0..n {
            d[i] = -(0..n).map(|j| h[i * n + j] * g[j]).sum::<f64>();
        }
        let mut slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if slope >= 0.0 || !slope.is_finite() {
            h = identity(n);
            fresh = true;
            d.iter_mut().zip(&g).for_each(|(di, gi)| *di = -gi);
            slope = -g.iter().map(|v| v * v).sum::<f64>();
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            for i in 0..n {
                x_new[i] = x[i] + t * d[i];
            }
            let f_new = obj.loss(&x_new);
            if f_new.is_finite() && f_new <= f + armijo * t * slope {
                accepted = Some(f_new);
                break;
            }
            t *= 0.5;
        }
        iterations += 1;
        let Some(_) = accepted else {
            if fresh {
                // Even steepest descent makes no progress.
                converged = true;
                break;
            }
            h = identity(n);
            fresh = true;
            continue;
        };
        let f_new = obj.loss_and_grad(&x_new, &mut g_new);
        let s: Vec<f64> = (0..n).map(|i| x_new[i] - x[i]).collect();
        let y: Vec<f64> = (0..n).map(|i| g_new[i] - g[i]).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        if sy > 1e-300 {
            if fresh {
                // Scale the initial approximation to the observed curvature.
                let yy: f64 = y.iter().map(|v| v * v).sum();
                let scale = sy / yy;
                h.iter_mut().for_each(|v| *v *= scale);
                fresh = false;
            }
            update(&mut h, &s, &y, sy);
        }
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        stalled = if f - f_new <= STALL_TOL * f { stalled + 1 } else { 0 };
        f = f_new;
        if stalled >= STALL_STEPS {
            converged = true;
            break;
        }
    }
    BfgsOutcome {
        theta: x,
        loss: f,
        iterations,
        converged,
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

/// `H <- (I - r s y') H (I - r y s') + r s s'` with `r = 1 / (y's)`.
fn update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let r = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum()).collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += -r * (hy[i] * s[j] + s[i] * hy[j]) + (r * r * yhy + r) * s[i] * s[j];
        }
    }
}
