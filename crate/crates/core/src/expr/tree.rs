use super::symbol::{Binary, PathSymbol, Unary};
use crate::error::ExprError;
use std::fmt;

/// Default structural caps.
pub const DEFAULT_MAX_DEPTH: usize = 8;
pub const DEFAULT_MAX_WIDTH: usize = 5;

/// A unary operator wrapped in an affine map: `alpha * op(input) + beta`.
#[derive(Clone, Debug, PartialEq)]
pub struct Affine {
    pub op: Unary,
    pub alpha: f64,
    pub beta: f64,
}

impl Affine {
    pub fn new(op: Unary) -> Self {
        Affine {
            op,
            alpha: 1.0,
            beta: 0.0,
        }
    }

    pub fn with(op: Unary, alpha: f64, beta: f64) -> Self {
        Affine { op, alpha, beta }
    }
}

/// Terminal node: `sum_i gamma_i * op(x[vars_i])`.
#[derive(Clone, Debug, PartialEq)]
pub struct Leaf {
    pub op: Unary,
    pub gamma: Vec<f64>,
    pub vars: Vec<usize>,
}

impl Leaf {
    pub fn new(op: Unary, vars: Vec<usize>) -> Self {
        Leaf {
            op,
            gamma: vec![1.0; vars.len()],
            vars,
        }
    }

    pub fn with_gamma(op: Unary, vars: Vec<usize>, gamma: Vec<f64>) -> Self {
        Leaf { op, gamma, vars }
    }
}

/// A binary connector joining two or more branches.
#[derive(Clone, Debug, PartialEq)]
pub struct Connector {
    pub op: Binary,
    pub branches: Vec<Branch>,
}

/// A non-empty sequence of affine unaries, outermost first, ending in a
/// deeper connector or a leaf.
#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    pub ops: Vec<Affine>,
    pub tail: Tail,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Tail {
    Connector(Connector),
    Leaf(Leaf),
}

/// Identifies a leaf by the branch index taken under each connector on the
/// way down. The bare tree (root directly over a leaf) has the empty id.
pub type LeafId = Vec<usize>;

#[derive(Clone, Debug, PartialEq)]
pub struct ExpressionTree {
    pub root: Affine,
    pub body: Tail,
}

impl Branch {
    pub fn new(ops: Vec<Affine>, tail: Tail) -> Self {
        Branch { ops, tail }
    }

    pub fn leaf(ops: Vec<Affine>, leaf: Leaf) -> Self {
        Branch {
            ops,
            tail: Tail::Leaf(leaf),
        }
    }

    pub fn connector(ops: Vec<Affine>, op: Binary, branches: Vec<Branch>) -> Self {
        Branch {
            ops,
            tail: Tail::Connector(Connector { op, branches }),
        }
    }
}

impl ExpressionTree {
    pub fn new(root: Affine, body: Tail) -> Self {
        ExpressionTree { root, body }
    }

    pub fn bare(root: Affine, leaf: Leaf) -> Self {
        ExpressionTree {
            root,
            body: Tail::Leaf(leaf),
        }
    }

    pub fn connected(root: Affine, op: Binary, branches: Vec<Branch>) -> Self {
        ExpressionTree {
            root,
            body: Tail::Connector(Connector { op, branches }),
        }
    }

    /// Checks arity, sequence, and leaf invariants.
    pub fn validate(&self) -> Result<(), ExprError> {
        validate_tail(&self.body, "$")
    }

    /// Checks the configured depth and width caps.
    pub fn check_bounds(&self, max_depth: usize, max_width: usize) -> Result<(), ExprError> {
        let (depth, width) = (self.depth(), self.width());
        if depth > max_depth || width > max_width {
            return Err(ExprError::Bounds {
                depth,
                width,
                max_depth,
                max_width,
            });
        }
        Ok(())
    }

    /// Checks that every leaf variable indexes into `columns` columns.
    pub fn check_variables(&self, columns: usize) -> Result<(), ExprError> {
        let mut bad = None;
        self.for_each_leaf(&mut |leaf| {
            if bad.is_none() {
                bad = leaf.vars.iter().copied().find(|&v| v >= columns);
            }
        });
        match bad {
            Some(index) => Err(ExprError::UnresolvedVariable { index, columns }),
            None => Ok(()),
        }
    }

    pub fn width(&self) -> usize {
        match &self.body {
            Tail::Leaf(_) => 1,
            Tail::Connector(c) => c.branches.len(),
        }
    }

    /// Longest subsequence length, counting every unary and binary element.
    pub fn depth(&self) -> usize {
        1 + tail_depth(&self.body)
    }

    pub fn leaves(&self) -> Vec<LeafId> {
        let mut out = Vec::new();
        collect_leaves(&self.body, &mut Vec::new(), &mut out);
        out
    }

    pub fn leaf_count(&self) -> usize {
        let mut n = 0;
        self.for_each_leaf(&mut |_| n += 1);
        n
    }

    pub fn leaf(&self, id: &[usize]) -> Result<&Leaf, ExprError> {
        let mut tail = &self.body;
        for &i in id {
            match tail {
                Tail::Connector(c) if i < c.branches.len() => tail = &c.branches[i].tail,
                _ => return Err(ExprError::UnknownLeaf(id.to_vec())),
            }
        }
        match tail {
            Tail::Leaf(l) => Ok(l),
            Tail::Connector(_) => Err(ExprError::UnknownLeaf(id.to_vec())),
        }
    }

    /// Ordered operators on the path from the root to the given leaf.
    pub fn subsequence(&self, id: &[usize]) -> Result<Vec<PathSymbol>, ExprError> {
        let mut out = vec![PathSymbol::Unary(self.root.op)];
        let mut tail = &self.body;
        for &i in id {
            match tail {
                Tail::Connector(c) if i < c.branches.len() => {
                    out.push(PathSymbol::Binary(c.op));
                    let branch = &c.branches[i];
                    out.extend(branch.ops.iter().map(|a| PathSymbol::Unary(a.op)));
                    tail = &branch.tail;
                }
                _ => return Err(ExprError::UnknownLeaf(id.to_vec())),
            }
        }
        match tail {
            Tail::Leaf(l) => {
                out.push(PathSymbol::Unary(l.op));
                Ok(out)
            }
            Tail::Connector(_) => Err(ExprError::UnknownLeaf(id.to_vec())),
        }
    }

    pub fn subsequences(&self) -> Vec<Vec<PathSymbol>> {
        self.leaves()
            .iter()
            .map(|id| self.subsequence(id).expect("leaf ids come from the tree"))
            .collect()
    }

    /// Distinct variable indices referenced by any leaf.
    pub fn variables(&self) -> Vec<usize> {
        let mut vars = Vec::new();
        self.for_each_leaf(&mut |leaf| vars.extend_from_slice(&leaf.vars));
        vars.sort_unstable();
        vars.dedup();
        vars
    }

    pub fn for_each_leaf<'a>(&'a self, f: &mut impl FnMut(&'a Leaf)) {
        visit_leaves(&self.body, f);
    }

    pub fn node_count(&self) -> usize {
        1 + tail_nodes(&self.body)
    }

    pub fn parameter_count(&self) -> usize {
        let mut n = 2;
        count_params(&self.body, &mut n);
        n
    }

    /// Flat parameter vector in pre-order: affine `alpha, beta` pairs, leaf gammas.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = vec![self.root.alpha, self.root.beta];
        push_params(&self.body, &mut out);
        out
    }

    pub fn set_parameters(&mut self, theta: &[f64]) -> Result<(), ExprError> {
        let expected = self.parameter_count();
        if theta.len() != expected {
            return Err(ExprError::ParameterCount {
                expected,
                found: theta.len(),
            });
        }
        self.root.alpha = theta[0];
        self.root.beta = theta[1];
        let mut cursor = 2;
        pull_params(&mut self.body, theta, &mut cursor);
        Ok(())
    }

    pub fn with_parameters(&self, theta: &[f64]) -> Result<Self, ExprError> {
        let mut t = self.clone();
        t.set_parameters(theta)?;
        Ok(t)
    }

    /// Human-readable name for each entry of [`Self::parameters`].
    pub fn parameter_labels(&self) -> Vec<String> {
        let mut out = vec!["root.alpha".to_string(), "root.beta".to_string()];
        label_params(&self.body, "", &mut out);
        out
    }
}

fn validate_tail(tail: &Tail, at: &str) -> Result<(), ExprError> {
    match tail {
        Tail::Leaf(leaf) => {
            if leaf.vars.is_empty() {
                return Err(ExprError::Structure {
                    position: at.to_string(),
                    message: "leaf references no variables".into(),
                });
            }
            if leaf.vars.len() != leaf.gamma.len() {
                return Err(ExprError::Structure {
                    position: at.to_string(),
                    message: format!(
                        "leaf has {} variables but {} coefficients",
                        leaf.vars.len(),
                        leaf.gamma.len()
                    ),
                });
            }
            Ok(())
        }
        Tail::Connector(c) => {
            let n = c.branches.len();
            match c.op {
                Binary::Div if n != 2 => {
                    return Err(ExprError::Arity {
                        position: at.to_string(),
                        connector: "div",
                        expected: "exactly 2",
                        found: n,
                    })
                }
                Binary::Add | Binary::Mul if n < 2 => {
                    return Err(ExprError::Arity {
                        position: at.to_string(),
                        connector: c.op.name(),
                        expected: "at least 2",
                        found: n,
                    })
                }
                _ => {}
            }
            for (i, b) in c.branches.iter().enumerate() {
                let here = format!("{at}.children[{i}]");
                if b.ops.is_empty() {
                    return Err(ExprError::Structure {
                        position: here,
                        message: "branch has an empty operator sequence".into(),
                    });
                }
                if b.ops.len() > 1 && b.ops.iter().any(|a| a.op == Unary::Id) {
                    return Err(ExprError::IdentityInSequence { position: here });
                }
                validate_tail(&b.tail, &here)?;
            }
            Ok(())
        }
    }
}

fn tail_depth(tail: &Tail) -> usize {
    match tail {
        Tail::Leaf(_) => 1,
        Tail::Connector(c) => c
            .branches
            .iter()
            .map(|b| 1 + b.ops.len() + tail_depth(&b.tail))
            .max()
            .unwrap_or(0),
    }
}

fn tail_nodes(tail: &Tail) -> usize {
    match tail {
        Tail::Leaf(_) => 1,
        Tail::Connector(c) => {
            1 + c
                .branches
                .iter()
                .map(|b| b.ops.len() + tail_nodes(&b.tail))
                .sum::<usize>()
        }
    }
}

fn collect_leaves(tail: &Tail, prefix: &mut Vec<usize>, out: &mut Vec<LeafId>) {
    match tail {
        Tail::Leaf(_) => out.push(prefix.clone()),
        Tail::Connector(c) => {
            for (i, b) in c.branches.iter().enumerate() {
                prefix.push(i);
                collect_leaves(&b.tail, prefix, out);
                prefix.pop();
            }
        }
    }
}

fn visit_leaves<'a>(tail: &'a Tail, f: &mut impl FnMut(&'a Leaf)) {
    match tail {
        Tail::Leaf(l) => f(l),
        Tail::Connector(c) => c.branches.iter().for_each(|b| visit_leaves(&b.tail, f)),
    }
}

fn count_params(tail: &Tail, n: &mut usize) {
    match tail {
        Tail::Leaf(l) => *n += l.gamma.len(),
        Tail::Connector(c) => {
            for b in &c.branches {
                *n += 2 * b.ops.len();
                count_params(&b.tail, n);
            }
        }
    }
}

fn push_params(tail: &Tail, out: &mut Vec<f64>) {
    match tail {
        Tail::Leaf(l) => out.extend_from_slice(&l.gamma),
        Tail::Connector(c) => {
            for b in &c.branches {
                for a in &b.ops {
                    out.push(a.alpha);
                    out.push(a.beta);
                }
                push_params(&b.tail, out);
            }
        }
    }
}

fn pull_params(tail: &mut Tail, theta: &[f64], cursor: &mut usize) {
    match tail {
        Tail::Leaf(l) => {
            let n = l.gamma.len();
            l.gamma.copy_from_slice(&theta[*cursor..*cursor + n]);
            *cursor += n;
        }
        Tail::Connector(c) => {
            for b in &mut c.branches {
                for a in &mut b.ops {
                    a.alpha = theta[*cursor];
                    a.beta = theta[*cursor + 1];
                    *cursor += 2;
                }
                pull_params(&mut b.tail, theta, cursor);
            }
        }
    }
}

fn label_params(tail: &Tail, prefix: &str, out: &mut Vec<String>) {
    match tail {
        Tail::Leaf(l) => {
            for v in &l.vars {
                out.push(format!("{prefix}leaf.gamma[x{v}]"));
            }
        }
        Tail::Connector(c) => {
            for (i, b) in c.branches.iter().enumerate() {
                for (k, _) in b.ops.iter().enumerate() {
                    out.push(format!("{prefix}b{i}.s{k}.alpha"));
                    out.push(format!("{prefix}b{i}.s{k}.beta"));
                }
                label_params(&b.tail, &format!("{prefix}b{i}."), out);
            }
        }
    }
}

/// Formats a constant with six significant digits.
pub(crate) fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let s = format!("{:.5e}", x);
    let v: f64 = s.parse().unwrap_or(x);
    let mag = v.abs().log10().floor() as i32;
    if (-4..6).contains(&mag) {
        let decimals = (5 - mag).max(0) as usize;
        let mut t = format!("{:.*}", decimals, v);
        if t.contains('.') {
            while t.ends_with('0') {
                t.pop();
            }
            if t.ends_with('.') {
                t.pop();
            }
        }
        t
    } else {
        s
    }
}

fn fmt_affine(a: &Affine, inner: &str, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    let applied = match a.op {
        Unary::Id => format!("({inner})"),
        Unary::Square => format!("({inner})^2"),
        op => format!("{op}({inner})"),
    };
    write!(f, "{}*{}", sig6(a.alpha), applied)?;
    if a.beta != 0.0 {
        if a.beta < 0.0 {
            write!(f, " - {}", sig6(-a.beta))?;
        } else {
            write!(f, " + {}", sig6(a.beta))?;
        }
    }
    Ok(())
}

struct TailDisplay<'a>(&'a Tail);

impl fmt::Display for TailDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Tail::Leaf(l) => {
                for (i, (g, v)) in l.gamma.iter().zip(&l.vars).enumerate() {
                    if i > 0 {
                        f.write_str(" + ")?;
                    }
                    match l.op {
                        Unary::Id => write!(f, "{}*x{}", sig6(*g), v)?,
                        Unary::Square => write!(f, "{}*x{}^2", sig6(*g), v)?,
                        op => write!(f, "{}*{}(x{})", sig6(*g), op, v)?,
                    }
                }
                Ok(())
            }
            Tail::Connector(c) => {
                for (i, b) in c.branches.iter().enumerate() {
                    if i > 0 {
                        f.write_str(c.op.infix())?;
                    }
                    f.write_str("(")?;
                    BranchDisplay(&b.ops, &b.tail).fmt(f)?;
                    f.write_str(")")?;
                }
                Ok(())
            }
        }
    }
}

struct BranchDisplay<'a>(&'a [Affine], &'a Tail);

impl fmt::Display for BranchDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0.split_first() {
            None => TailDisplay(self.1).fmt(f),
            Some((head, rest)) => {
                let inner = BranchDisplay(rest, self.1).to_string();
                fmt_affine(head, &inner, f)
            }
        }
    }
}

/// Plain infix rendering with constants at six significant digits.
impl fmt::Display for ExpressionTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = TailDisplay(&self.body).to_string();
        fmt_affine(&self.root, &inner, f)
    }
}
