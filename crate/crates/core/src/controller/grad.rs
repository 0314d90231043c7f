//! Forward replay of a sampled skeleton and reverse accumulation of
//! log-probability and KL gradients through the recurrence.

use super::sample::SampledSkeleton;
use super::{ControllerParams, Layout};
use crate::error::ControllerError;
use crate::grammar::{Mask, N_TOKENS};
use crate::priors::PriorModel;

pub(crate) struct CellOut {
    pub z: Vec<f64>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn cell(p: &ControllerParams, x: &[usize; 3], h_prev: &[f64]) -> CellOut {
    let l = &p.layout;
    let (hd, d) = (l.hidden, l.input);
    let w = &p.weights;
    let mut z = vec![0.0; hd];
    let mut c = vec![0.0; hd];
    for i in 0..hd {
        let mut az = w[l.gate_bias + i];
        let mut ac = w[l.cand_bias + i];
        for &k in x {
            az += w[l.gate_input + i * d + k];
            ac += w[l.cand_input + i * d + k];
        }
        let uz = &w[l.gate_hidden + i * hd..l.gate_hidden + (i + 1) * hd];
        let uc = &w[l.cand_hidden + i * hd..l.cand_hidden + (i + 1) * hd];
        for j in 0..hd {
            az += uz[j] * h_prev[j];
            ac += uc[j] * h_prev[j];
        }
        z[i] = sigmoid(az);
        c[i] = ac.tanh();
    }
    let h = (0..hd).map(|i| (1.0 - z[i]) * h_prev[i] + z[i] * c[i]).collect();
    CellOut { z, c, h }
}

pub(crate) fn head_logits(p: &ControllerParams, head: usize, h: &[f64]) -> [f64; N_TOKENS] {
    let (wo, bo) = p.layout.heads[head];
    let hd = p.layout.hidden;
    std::array::from_fn(|t| {
        let row = &p.weights[wo + t * hd..wo + (t + 1) * hd];
        p.weights[bo + t] + row.iter().zip(h).map(|(a, b)| a * b).sum::<f64>()
    })
}

/// Softmax restricted to `mask`; masked entries are exactly zero. With a
/// prior, its log is added to the logits first.
pub(crate) fn masked_softmax(
    logits: &[f64; N_TOKENS],
    mask: &Mask,
    prior: Option<&[f64; N_TOKENS]>,
) -> [f64; N_TOKENS] {
    let shifted: [f64; N_TOKENS] = std::array::from_fn(|i| match prior {
        Some(p) if mask[i] => logits[i] + p[i].ln(),
        _ => logits[i],
    });
    let max = (0..N_TOKENS)
        .filter(|&i| mask[i])
        .map(|i| shifted[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut y = [0.0; N_TOKENS];
    let mut total = 0.0;
    for i in 0..N_TOKENS {
        if mask[i] {
            y[i] = (shifted[i] - max).exp();
            total += y[i];
        }
    }
    y.iter_mut().for_each(|v| *v /= total);
    y
}

/// Per-skeleton quantities from a forward replay.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// `sum_i log y_i(s_i)`.
    pub log_prob: f64,
    /// Mean over decisions of `KL(P* || y_i)`.
    pub kl_avg: f64,
    /// Output distribution of every decision.
    pub outputs: Vec<[f64; N_TOKENS]>,
}

struct Trace {
    cells: Vec<CellOut>,
    prev: Vec<Vec<f64>>,
    outputs: Vec<[f64; N_TOKENS]>,
}

fn check(params: &ControllerParams, skel: &SampledSkeleton) -> Result<(), ControllerError> {
    let l: &Layout = &params.layout;
    for (k, s) in skel.steps.iter().enumerate() {
        if s.input.iter().any(|&i| i >= l.input) {
            return Err(ControllerError::Mismatch(format!(
                "step {k} input slots {:?} exceed input size {}",
                s.input, l.input
            )));
        }
        if s.source.is_some_and(|j| j >= k) {
            return Err(ControllerError::Mismatch(format!("step {k} reads a later state")));
        }
        if !s.mask[s.token.index()] {
            return Err(ControllerError::Mismatch(format!(
                "step {k} token {} lies outside its mask",
                s.token.name()
            )));
        }
    }
    Ok(())
}

fn forward(params: &ControllerParams, skel: &SampledSkeleton) -> Trace {
    let hd = params.layout.hidden;
    let zero = vec![0.0; hd];
    let mut cells: Vec<CellOut> = Vec::with_capacity(skel.steps.len());
    let mut prev = Vec::with_capacity(skel.steps.len());
    let mut outputs = Vec::with_capacity(skel.steps.len());
    for s in &skel.steps {
        let hp = s.source.map_or(zero.clone(), |j| cells[j].h.clone());
        let out = cell(params, &s.input, &hp);
        let logits = head_logits(params, s.context.role.head(), &out.h);
        outputs.push(masked_softmax(&logits, &s.mask, skel.prior_bias.then_some(&s.prior)));
        prev.push(hp);
        cells.push(out);
    }
    Trace { cells, prev, outputs }
}

/// Prior of each step renormalized over that step's mask.
fn step_priors(skel: &SampledSkeleton, prior: Option<&PriorModel>) -> Vec<[f64; N_TOKENS]> {
    skel.steps
        .iter()
        .map(|s| match prior {
            None => s.prior,
            Some(m) => {
                let raw = m.lookup(&s.context).0;
                super::sample::restrict(&raw, &s.mask)
            }
        })
        .collect()
}

/// `KL(p || q) = sum p ln(p / q)` over entries with `p > 0`; infinite when
/// `q` has no mass where `p` does.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| if b > 0.0 { a * (a / b).ln() } else { f64::INFINITY })
        .sum()
}

fn evaluate_with(trace: &Trace, skel: &SampledSkeleton, priors: &[[f64; N_TOKENS]]) -> Evaluation {
    let mut log_prob = 0.0;
    let mut kl_sum = 0.0;
    for (k, s) in skel.steps.iter().enumerate() {
        log_prob += trace.outputs[k][s.token.index()].ln();
        kl_sum += kl_divergence(&priors[k], &trace.outputs[k]);
    }
    let n = skel.steps.len().max(1) as f64;
    Evaluation {
        log_prob,
        kl_avg: kl_sum / n,
        outputs: trace.outputs.clone(),
    }
}

/// Log-probability, average KL to the skeleton's recorded prior, and every
/// output distribution.
pub fn evaluate(params: &ControllerParams, skel: &SampledSkeleton) -> Result<Evaluation, ControllerError> {
    check(params, skel)?;
    let trace = forward(params, skel);
    let priors = step_priors(skel, None);
    Ok(evaluate_with(&trace, skel, &priors))
}

/// Gradient of `w_log_prob * log p + w_kl * KL_avg` in one backward pass.
/// KL is taken against `prior` when given, else against the prior recorded
/// at sampling time.
pub fn objective_and_grad(
    params: &ControllerParams,
    skel: &SampledSkeleton,
    prior: Option<&PriorModel>,
    w_log_prob: f64,
    w_kl: f64,
) -> Result<(Evaluation, Vec<f64>), ControllerError> {
    check(params, skel)?;
    let trace = forward(params, skel);
    let priors = step_priors(skel, prior);
    let eval = evaluate_with(&trace, skel, &priors);
    let n = skel.steps.len().max(1) as f64;
    let l = &params.layout;
    let (hd, d) = (l.hidden, l.input);
    let w = &params.weights;
    let mut g = vec![0.0; params.len()];
    let mut dh: Vec<Vec<f64>> = vec![vec![0.0; hd]; skel.steps.len()];
    for k in (0..skel.steps.len()).rev() {
        let s = &skel.steps[k];
        let y = &trace.outputs[k];
        let tok = s.token.index();
        // d/dlogits: log y(s) gives onehot - y, KL gives y - P*.
        let dl: [f64; N_TOKENS] = std::array::from_fn(|i| {
            if !s.mask[i] {
                return 0.0;
            }
            let onehot = if i == tok { 1.0 } else { 0.0 };
            w_log_prob * (onehot - y[i]) + w_kl / n * (y[i] - priors[k][i])
        });
        let out = &trace.cells[k];
        let (wo, bo) = l.heads[s.context.role.head()];
        let mut dhk = std::mem::take(&mut dh[k]);
        for t in 0..N_TOKENS {
            if dl[t] == 0.0 {
                continue;
            }
            g[bo + t] += dl[t];
            for j in 0..hd {
                g[wo + t * hd + j] += dl[t] * out.h[j];
                dhk[j] += dl[t] * w[wo + t * hd + j];
            }
        }
        let hp = &trace.prev[k];
        let mut dprev = vec![0.0; hd];
        for i in 0..hd {
            let (z, c) = (out.z[i], out.c[i]);
            dprev[i] += dhk[i] * (1.0 - z);
            let daz = dhk[i] * (c - hp[i]) * z * (1.0 - z);
            let dac = dhk[i] * z * (1.0 - c * c);
            g[l.gate_bias + i] += daz;
            g[l.cand_bias + i] += dac;
            for &x in &s.input {
                g[l.gate_input + i * d + x] += daz;
                g[l.cand_input + i * d + x] += dac;
            }
            for j in 0..hd {
                g[l.gate_hidden + i * hd + j] += daz * hp[j];
                g[l.cand_hidden + i * hd + j] += dac * hp[j];
                dprev[j] += daz * w[l.gate_hidden + i * hd + j] + dac * w[l.cand_hidden + i * hd + j];
            }
        }
        if let Some(src) = s.source {
            for (a, b) in dh[src].iter_mut().zip(&dprev) {
                *a += b;
            }
        }
    }
    Ok((eval, g))
}

/// `sum_i log y_i(s_i)` and its gradient.
pub fn log_prob_and_grad(
    params: &ControllerParams,
    skel: &SampledSkeleton,
) -> Result<(f64, Vec<f64>), ControllerError> {
    let (e, g) = objective_and_grad(params, skel, None, 1.0, 0.0)?;
    Ok((e.log_prob, g))
}

/// Average KL from `prior` to the outputs, and its gradient.
pub fn kl_and_grad(
    params: &ControllerParams,
    skel: &SampledSkeleton,
    prior: &PriorModel,
) -> Result<(f64, Vec<f64>), ControllerError> {
    let (e, g) = objective_and_grad(params, skel, Some(prior), 0.0, 1.0)?;
    Ok((e.kl_avg, g))
}
