//! Variable projection: the outer linear coefficients are solved by least
//! squares for every value of the remaining parameters, and the optimizers
//! only see the rest.

use super::{Objective, Smooth};

const RIDGE: f64 = 1e-12;

pub struct Projected<'o, 'a> {
    obj: &'o mut Objective<'a>,
    heads: Vec<(usize, usize)>,
    split_root: bool,
    free: Vec<usize>,
    theta: Vec<f64>,
    full_grad: Vec<f64>,
}

impl<'o, 'a> Projected<'o, 'a> {
    /// Projection around `theta`, whose free entries are the starting point.
    pub fn new(obj: &'o mut Objective<'a>, theta: &[f64]) -> Self {
        let (heads, split_root) = obj.program.linear_head();
        let mut linear = vec![false; theta.len()];
        linear[0] = true;
        linear[1] = true;
        for &(_, a) in &heads {
            linear[a] = true;
            linear[a + 1] = true;
        }
        let free = (0..theta.len()).filter(|&i| !linear[i]).collect();
        Projected {
            obj,
            heads,
            split_root,
            free,
            theta: theta.to_vec(),
            full_grad: vec![0.0; theta.len()],
        }
    }

    pub fn free(&self) -> Vec<f64> {
        self.free.iter().map(|&i| self.theta[i]).collect()
    }

    /// Full parameter vector at the last evaluated point.
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// Sets the free parameters, solves for the linear ones and returns the
    /// squared NRMSE.
    fn solve(&mut self, free: &[f64]) -> f64 {
        for (&i, &v) in self.free.iter().zip(free) {
            self.theta[i] = v;
        }
        let obj = &mut *self.obj;
        obj.program.forward(&self.theta, obj.x, &mut obj.ws);
        let cols: Vec<&[f64]> = self.heads.iter().map(|&(node, _)| obj.ws.activation(node)).collect();
        if cols.iter().any(|c| c.iter().any(|v| !v.is_finite())) {
            return f64::INFINITY;
        }
        let (coef, intercept) = least_squares(&cols, obj.y);
        let mut sum = 0.0;
        for (r, &y) in obj.y.iter().enumerate() {
            let p = intercept + cols.iter().zip(&coef).map(|(c, k)| k * c[r]).sum::<f64>();
            sum += (p - y) * (p - y);
        }
        for (&(_, a), &k) in self.heads.iter().zip(&coef) {
            self.theta[a] = k;
            self.theta[a + 1] = 0.0;
        }
        if self.split_root {
            self.theta[0] = 1.0;
        }
        self.theta[1] = intercept;
        let l = sum * obj.scale;
        if l.is_finite() {
            l
        } else {
            f64::INFINITY
        }
    }
}

impl Smooth for Projected<'_, '_> {
    fn loss(&mut self, free: &[f64]) -> f64 {
        self.solve(free)
    }

    /// At the least-squares solution the partial derivatives in the linear
    /// coefficients vanish, so the reduced gradient is the full gradient
    /// restricted to the free entries.
    fn loss_and_grad(&mut self, free: &[f64], grad: &mut [f64]) -> f64 {
        let l = self.solve(free);
        if !l.is_finite() {
            return l;
        }
        self.obj.loss_and_grad(&self.theta, &mut self.full_grad);
        for (g, &i) in grad.iter_mut().zip(&self.free) {
            *g = self.full_grad[i];
        }
        l
    }
}

/// Ordinary least squares of `y` on `cols` plus an intercept, via the
/// correlation-scaled normal equations with a tiny ridge. Columns without
/// variation get a zero coefficient.
pub(crate) fn least_squares(cols: &[&[f64]], y: &[f64]) -> (Vec<f64>, f64) {
    let n = y.len() as f64;
    let k = cols.len();
    let y_mean = y.iter().sum::<f64>() / n;
    let means: Vec<f64> = cols.iter().map(|c| c.iter().sum::<f64>() / n).collect();
    let centered: Vec<Vec<f64>> = cols
        .iter()
        .zip(&means)
        .map(|(c, m)| c.iter().map(|v| v - m).collect())
        .collect();
    let norms: Vec<f64> = centered.iter().map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let active: Vec<usize> = (0..k)
        .filter(|&i| norms[i] > 1e-10 * n.sqrt() * (1.0 + means[i].abs()))
        .collect();
    let m = active.len();
    let mut a = vec![0.0; m * m];
    let mut b = vec![0.0; m];
    for (p, &i) in active.iter().enumerate() {
        for (q, &j) in active.iter().enumerate().skip(p) {
            let g = centered[i].iter().zip(&centered[j]).map(|(u, v)| u * v).sum::<f64>() / (norms[i] * norms[j]);
            a[p * m + q] = g;
            a[q * m + p] = g;
        }
        a[p * m + p] += RIDGE;
        b[p] = centered[i].iter().zip(y).map(|(u, v)| u * (v - y_mean)).sum::<f64>() / norms[i];
    }
    let z = solve_spd(&mut a, &mut b, m);
    let mut coef = vec![0.0; k];
    for (p, &i) in active.iter().enumerate() {
        coef[i] = z[p] / norms[i];
    }
    let intercept = y_mean - coef.iter().zip(&means).map(|(c, m)| c * m).sum::<f64>();
    (coef, intercept)
}

/// Gaussian elimination with partial pivoting on an `m x m` system.
fn solve_spd(a: &mut [f64], b: &mut [f64], m: usize) -> Vec<f64> {
    for col in 0..m {
        let pivot = (col..m)
            .max_by(|&i, &j| a[i * m + col].abs().total_cmp(&a[j * m + col].abs()))
            .unwrap_or(col);
        if pivot != col {
            for j in 0..m {
                a.swap(col * m + j, pivot * m + j);
            }
            b.swap(col, pivot);
        }
        let d = a[col * m + col];
        if d.abs() < 1e-300 {
            continue;
        }
        for i in col + 1..m {
            let f = a[i * m + col] / d;
            for j in col..m {
                a[i * m + j] -= f * a[col * m + j];
            }
            b[i] -= f * b[col];
        }
    }
    let mut x = vec![0.0; m];
    for i in (0..m).rev() {
        let s: f64 = (i + 1..m).map(|j| a[i * m + j] * x[j]).sum();
        let d = a[i * m + i];
        x[i] = if d.abs() < 1e-300 { 0.0 } else { (b[i] - s) / d };
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;
    use crate::expr::{evaluate, parse};

    #[test]
    fn reduced_gradient_matches_finite_differences() {
        let tree = parse(
            r#"{"op":"id","connector":"add","children":[
                {"op":"exp","children":[{"leaf":"id","gamma":[0.7],"vars":[0]}]},
                {"op":"sin","children":[{"leaf":"id","gamma":[1.3],"vars":[0]}]}]}"#,
        )
        .unwrap();
        let x: Vec<f64> = (0..40).map(|i| 0.5 + i as f64 * 0.04).collect();
        let y: Vec<f64> = x.iter().map(|v| (1.1 * v).exp() - 0.4 * v.cos() + 0.3).collect();
        let data = Dataset::new(vec!["x0".into()], vec![x], y).unwrap();
        let mut obj = Objective::new(&tree, &data).unwrap();
        let mut proj = Projected::new(&mut obj, &tree.parameters());
        let z = proj.free();
        assert_eq!(z, vec![0.7, 1.3]);
        let mut g = vec![0.0; 2];
        proj.loss_and_grad(&z, &mut g);
        for i in 0..2 {
            let h = 1e-6;
            let (mut a, mut b) = (z.clone(), z.clone());
            a[i] += h;
            b[i] -= h;
            let fd = (proj.loss(&a) - proj.loss(&b)) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6 * fd.abs().max(1e-6), "{i}: {fd} vs {}", g[i]);
        }
        // The reported full vector reproduces the projected loss.
        let l = proj.loss(&z);
        let fitted = tree.with_parameters(proj.theta()).unwrap();
        let pred = evaluate(&fitted, &data.x).unwrap();
        let mse: f64 = pred.iter().zip(&data.y).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / 40.0;
        let sd = crate::optimize::std_dev(&data.y);
        assert!((mse / (sd * sd) - l).abs() < 1e-9 * l.max(1e-12));
    }

    #[test]
    fn least_squares_recovers_exact_combination() {
        let u: Vec<f64> = (0..20).map(|i| i as f64 * 0.1).collect();
        let v: Vec<f64> = u.iter().map(|x| x.sin()).collect();
        let y: Vec<f64> = u.iter().zip(&v).map(|(a, b)| 2.0 * a - 3.0 * b + 0.5).collect();
        let (c, b) = least_squares(&[&u, &v], &y);
        assert!((c[0] - 2.0).abs() < 1e-8 && (c[1] + 3.0).abs() < 1e-8 && (b - 0.5).abs() < 1e-8);
    }

    #[test]
    fn constant_column_gets_zero_coefficient() {
        let u = vec![1.0; 10];
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let (c, b) = least_squares(&[&u], &y);
        assert_eq!(c[0], 0.0);
        assert!((b - 4.5).abs() < 1e-12);
    }
}
