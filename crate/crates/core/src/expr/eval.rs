//! Column-wise evaluation of expression trees with reverse-mode parameter
//! gradients.
//!
//! A tree is compiled into a post-order [`Program`] whose parameter offsets
//! follow [`ExpressionTree::parameters`]. Forward passes fill a reusable
//! [`Workspace`]; the backward pass walks the program in reverse and
//! accumulates `d(seed . output) / d(theta)`.

use super::symbol::{Binary, Unary, DIV_FLOOR};
use super::tree::{ExpressionTree, Tail};
use crate::error::ExprError;

#[derive(Clone, Debug)]
enum Node {
    Leaf {
        op: Unary,
        vars: Vec<usize>,
        gamma: usize,
    },
    Affine {
        op: Unary,
        param: usize,
        child: usize,
    },
    Connector {
        op: Binary,
        children: Vec<usize>,
    },
}

/// A tree flattened for repeated evaluation under varying parameters.
#[derive(Clone, Debug)]
pub struct Program {
    nodes: Vec<Node>,
    n_params: usize,
    max_var: usize,
}

/// Per-node buffers reused across forward/backward passes.
#[derive(Default, Debug)]
pub struct Workspace {
    values: Vec<Vec<f64>>,
    acts: Vec<Vec<f64>>,
    adj: Vec<Vec<f64>>,
}

impl Workspace {
    /// `op(child)` of an affine node from the last forward pass.
    pub fn activation(&self, node: usize) -> &[f64] {
        &self.acts[node]
    }
}

impl Program {
    pub fn compile(tree: &ExpressionTree) -> Program {
        let mut nodes = Vec::new();
        let mut cursor = 2;
        let body = compile_tail(&tree.body, &mut cursor, &mut nodes);
        nodes.push(Node::Affine {
            op: tree.root.op,
            param: 0,
            child: body,
        });
        let max_var = tree.variables().last().copied().unwrap_or(0);
        Program {
            nodes,
            n_params: cursor,
            max_var,
        }
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn check_columns(&self, columns: usize) -> Result<(), ExprError> {
        if self.max_var >= columns {
            return Err(ExprError::UnresolvedVariable {
                index: self.max_var,
                columns,
            });
        }
        Ok(())
    }

    /// Affine nodes whose activations enter the output linearly, as
    /// `(node, alpha offset)` pairs. With an identity root over an additive
    /// connector whose children are all affine, these are the children and
    /// the root is left as `1 * u + beta`; otherwise it is the root alone.
    pub fn linear_head(&self) -> (Vec<(usize, usize)>, bool) {
        let root = self.nodes.len() - 1;
        if let Node::Affine { op: Unary::Id, child, .. } = &self.nodes[root] {
            if let Node::Connector { op: Binary::Add, children } = &self.nodes[*child] {
                let heads: Option<Vec<_>> = children
                    .iter()
                    .map(|&c| match &self.nodes[c] {
                        Node::Affine { param, .. } => Some((c, *param)),
                        _ => None,
                    })
                    .collect();
                if let Some(heads) = heads {
                    return (heads, true);
                }
            }
        }
        (vec![(root, 0)], false)
    }

    /// Evaluates every row; non-finite entries mark rows outside an
    /// operator's domain.
    pub fn forward<'w>(&self, theta: &[f64], x: &[Vec<f64>], ws: &'w mut Workspace) -> &'w [f64] {
        debug_assert_eq!(theta.len(), self.n_params);
        let rows = x.first().map_or(0, |c| c.len());
        let n = self.nodes.len();
        ws.values.resize_with(n, Vec::new);
        ws.acts.resize_with(n, Vec::new);
        for (i, node) in self.nodes.iter().enumerate() {
            let mut out = std::mem::take(&mut ws.values[i]);
            out.clear();
            out.resize(rows, 0.0);
            match node {
                Node::Leaf { op, vars, gamma } => {
                    for (k, &v) in vars.iter().enumerate() {
                        let g = theta[gamma + k];
                        let col = &x[v];
                        if *op == Unary::Id {
                            for (o, &xv) in out.iter_mut().zip(col) {
                                *o += g * xv;
                            }
                        } else {
                            for (o, &xv) in out.iter_mut().zip(col) {
                                *o += g * op.apply(xv);
                            }
                        }
                    }
                }
                Node::Affine { op, param, child } => {
                    let (alpha, beta) = (theta[*param], theta[param + 1]);
                    let mut act = std::mem::take(&mut ws.acts[i]);
                    act.clear();
                    act.extend(ws.values[*child].iter().map(|&u| op.apply(u)));
                    for (o, &a) in out.iter_mut().zip(&act) {
                        *o = alpha * a + beta;
                    }
                    ws.acts[i] = act;
                }
                Node::Connector { op, children } => match op {
                    Binary::Add => {
                        for &c in children {
                            for (o, &v) in out.iter_mut().zip(&ws.values[c]) {
                                *o += v;
                            }
                        }
                    }
                    Binary::Mul => {
                        out.iter_mut().for_each(|o| *o = 1.0);
                        for &c in children {
                            for (o, &v) in out.iter_mut().zip(&ws.values[c]) {
                                *o *= v;
                            }
                        }
                    }
                    Binary::Div => {
                        let (num, den) = (&ws.values[children[0]], &ws.values[children[1]]);
                        for ((o, &a), &b) in out.iter_mut().zip(num).zip(den) {
                            *o = if b.abs() > DIV_FLOOR { a / b } else { f64::NAN };
                        }
                    }
                },
            }
            ws.values[i] = out;
        }
        &ws.values[n - 1]
    }

    /// Accumulates `sum_r seed[r] * d out[r] / d theta` into `grad`
    /// (overwritten). Requires a preceding [`Self::forward`] on `ws`.
    pub fn backward(
        &self,
        theta: &[f64],
        x: &[Vec<f64>],
        ws: &mut Workspace,
        seed: &[f64],
        grad: &mut [f64],
    ) {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let n = self.nodes.len();
        let rows = seed.len();
        ws.adj.resize_with(n, Vec::new);
        for a in ws.adj.iter_mut() {
            a.clear();
            a.resize(rows, 0.0);
        }
        ws.adj[n - 1].copy_from_slice(seed);
        for i in (0..n).rev() {
            let adj = std::mem::take(&mut ws.adj[i]);
            match &self.nodes[i] {
                Node::Leaf { op, vars, gamma } => {
                    for (k, &v) in vars.iter().enumerate() {
                        let col = &x[v];
                        let s: f64 = if *op == Unary::Id {
                            adj.iter().zip(col).map(|(a, &xv)| a * xv).sum()
                        } else {
                            adj.iter().zip(col).map(|(a, &xv)| a * op.apply(xv)).sum()
                        };
                        grad[gamma + k] += s;
                    }
                }
                Node::Affine { op, param, child } => {
                    let alpha = theta[*param];
                    let act = &ws.acts[i];
                    let mut da = 0.0;
                    let mut db = 0.0;
                    for (a, &f) in adj.iter().zip(act) {
                        da += a * f;
                        db += a;
                    }
                    grad[*param] += da;
                    grad[param + 1] += db;
                    let u = &ws.values[*child];
                    let target = &mut ws.adj[*child];
                    for r in 0..rows {
                        target[r] += adj[r] * alpha * op.derivative(u[r], act[r]);
                    }
                }
                Node::Connector { op, children } => match op {
                    Binary::Add => {
                        for &c in children {
                            for (t, a) in ws.adj[c].iter_mut().zip(&adj) {
                                *t += a;
                            }
                        }
                    }
                    Binary::Mul => {
                        for (k, &c) in children.iter().enumerate() {
                            for r in 0..rows {
                                let mut p = adj[r];
                                for (j, &o) in children.iter().enumerate() {
                                    if j != k {
                                        p *= ws.values[o][r];
                                    }
                                }
                                ws.adj[c][r] += p;
                            }
                        }
                    }
                    Binary::Div => {
                        let (cn, cd) = (children[0], children[1]);
                        for r in 0..rows {
                            let b = ws.values[cd][r];
                            let q = ws.values[i][r];
                            ws.adj[cn][r] += adj[r] / b;
                            ws.adj[cd][r] -= adj[r] * q / b;
                        }
                    }
                },
            }
            ws.adj[i] = adj;
        }
    }
}

fn compile_tail(tail: &Tail, cursor: &mut usize, nodes: &mut Vec<Node>) -> usize {
    match tail {
        Tail::Leaf(leaf) => {
            let gamma = *cursor;
            *cursor += leaf.gamma.len();
            nodes.push(Node::Leaf {
                op: leaf.op,
                vars: leaf.vars.clone(),
                gamma,
            });
            nodes.len() - 1
        }
        Tail::Connector(c) => {
            let mut children = Vec::with_capacity(c.branches.len());
            for b in &c.branches {
                let first = *cursor;
                *cursor += 2 * b.ops.len();
                let mut child = compile_tail(&b.tail, cursor, nodes);
                for (k, a) in b.ops.iter().enumerate().rev() {
                    nodes.push(Node::Affine {
                        op: a.op,
                        param: first + 2 * k,
                        child,
                    });
                    child = nodes.len() - 1;
                }
                children.push(child);
            }
            nodes.push(Node::Connector { op: c.op, children });
            nodes.len() - 1
        }
    }
}

/// Evaluates `tree` on column-major inputs. Rows where any guarded operator
/// leaves its domain come back as NaN.
pub fn evaluate(tree: &ExpressionTree, x: &[Vec<f64>]) -> Result<Vec<f64>, ExprError> {
    tree.check_variables(x.len())?;
    let program = Program::compile(tree);
    let theta = tree.parameters();
    let mut ws = Workspace::default();
    let out = program.forward(&theta, x, &mut ws);
    Ok(out
        .iter()
        .map(|&v| if v.is_finite() { v } else { f64::NAN })
        .collect())
}

/// Evaluates a single row given as one value per column.
pub fn evaluate_row(tree: &ExpressionTree, row: &[f64]) -> Result<f64, ExprError> {
    let cols: Vec<Vec<f64>> = row.iter().map(|&v| vec![v]).collect();
    Ok(evaluate(tree, &cols)?[0])
}
