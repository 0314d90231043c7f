//! Canonical JSON text for expression trees (also the corpus record format).
//!
//! Internal nodes: `{"op":"<unary>","alpha":a,"beta":b,"connector":"<binary>","children":[...]}`.
//! A node without `connector` has exactly one child: the next operator of
//! its sequence, or a leaf. Leaves: `{"leaf":"<unary>","gamma":[...],"vars":[...]}`.

use super::symbol::{Binary, Unary};
use super::tree::{Affine, Branch, Connector, ExpressionTree, Leaf, Tail};
use crate::error::ExprError;
use serde_json::{Map, Value};
use std::fmt::Write;

fn num(out: &mut String, x: f64) {
    if x.is_finite() {
        out.push_str(&serde_json::to_string(&x).expect("finite float serializes"));
    } else {
        out.push_str("null");
    }
}

fn write_affine_open(out: &mut String, a: &Affine) {
    write!(out, "{{\"op\":\"{}\",\"alpha\":", a.op.name()).unwrap();
    num(out, a.alpha);
    out.push_str(",\"beta\":");
    num(out, a.beta);
}

fn write_leaf(out: &mut String, l: &Leaf) {
    write!(out, "{{\"leaf\":\"{}\",\"gamma\":[", l.op.name()).unwrap();
    for (i, g) in l.gamma.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        num(out, *g);
    }
    out.push_str("],\"vars\":[");
    for (i, v) in l.vars.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        write!(out, "{v}").unwrap();
    }
    out.push_str("]}");
}

/// Writes the tail below an affine node whose opening brace is already out.
fn write_after_affine(out: &mut String, tail: &Tail) {
    match tail {
        Tail::Leaf(l) => {
            out.push_str(",\"children\":[");
            write_leaf(out, l);
            out.push_str("]}");
        }
        Tail::Connector(c) => {
            write!(out, ",\"connector\":\"{}\",\"children\":[", c.op.name()).unwrap();
            for (i, b) in c.branches.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_branch(out, b);
            }
            out.push_str("]}");
        }
    }
}

fn write_branch(out: &mut String, b: &Branch) {
    write_ops(out, &b.ops, &b.tail);
}

fn write_ops(out: &mut String, ops: &[Affine], tail: &Tail) {
    let (head, rest) = ops.split_first().expect("branches carry at least one operator");
    write_affine_open(out, head);
    if rest.is_empty() {
        write_after_affine(out, tail);
    } else {
        out.push_str(",\"children\":[");
        write_ops(out, rest, tail);
        out.push_str("]}");
    }
}

/// Serializes the tree exactly as stored (no reordering).
pub fn to_json(tree: &ExpressionTree) -> String {
    let mut out = String::new();
    write_affine_open(&mut out, &tree.root);
    write_after_affine(&mut out, &tree.body);
    out
}

/// Canonical text: children of `add`/`mul` sorted by skeleton, then by text.
pub fn canonical_serialize(tree: &ExpressionTree) -> String {
    to_json(&tree.canonical())
}

impl ExpressionTree {
    /// Copy with commutative children in canonical order.
    pub fn canonical(&self) -> ExpressionTree {
        let mut t = self.clone();
        canonicalize_tail(&mut t.body);
        t
    }

    /// Structure-only key with constants stripped; equal for trees that differ
    /// only in parameters or in the order of commutative children.
    pub fn skeleton_key(&self) -> String {
        let mut out = self.root.op.name().to_string();
        tail_key(&self.body, &mut out);
        out
    }
}

fn canonicalize_tail(tail: &mut Tail) {
    if let Tail::Connector(c) = tail {
        for b in &mut c.branches {
            canonicalize_tail(&mut b.tail);
        }
        if c.op.is_associative() {
            let mut keyed: Vec<(String, String, Branch)> = c
                .branches
                .drain(..)
                .map(|b| {
                    let mut k = String::new();
                    branch_key(&b, &mut k);
                    let mut t = String::new();
                    write_branch(&mut t, &b);
                    (k, t, b)
                })
                .collect();
            keyed.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));
            c.branches = keyed.into_iter().map(|(_, _, b)| b).collect();
        }
    }
}

fn branch_key(b: &Branch, out: &mut String) {
    for (i, a) in b.ops.iter().enumerate() {
        if i > 0 {
            out.push('.');
        }
        out.push_str(a.op.name());
    }
    tail_key(&b.tail, out);
}

fn tail_key(tail: &Tail, out: &mut String) {
    match tail {
        Tail::Leaf(l) => {
            write!(out, ">{}{{", l.op.name()).unwrap();
            for (i, v) in l.vars.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write!(out, "{v}").unwrap();
            }
            out.push('}');
        }
        Tail::Connector(c) => {
            let mut keys: Vec<String> = c
                .branches
                .iter()
                .map(|b| {
                    let mut k = String::new();
                    branch_key(b, &mut k);
                    k
                })
                .collect();
            if c.op.is_associative() {
                keys.sort();
            }
            write!(out, "[{}]({})", c.op.name(), keys.join(",")).unwrap();
        }
    }
}

fn err(position: &str, message: impl Into<String>) -> ExprError {
    ExprError::Parse {
        position: position.to_string(),
        message: message.into(),
    }
}

/// Parses one tree from its JSON text and validates its invariants.
pub fn parse(text: &str) -> Result<ExpressionTree, ExprError> {
    let value: Value = serde_json::from_str(text).map_err(|e| {
        err(
            &format!("line {} column {}", e.line(), e.column()),
            e.to_string(),
        )
    })?;
    let tree = from_value(&value)?;
    tree.validate()?;
    Ok(tree)
}

/// Converts an already-decoded JSON value into a tree (no validation).
pub fn from_value(value: &Value) -> Result<ExpressionTree, ExprError> {
    let obj = object(value, "$")?;
    let (root, next) = affine_node(obj, "$")?;
    let body = match next {
        Next::Connector(c) => Tail::Connector(c),
        Next::Leaf(l) => Tail::Leaf(l),
        Next::Op(_, at) => {
            return Err(ExprError::Structure {
                position: at,
                message: "a unary chain below the root needs a connector".into(),
            })
        }
    };
    Ok(ExpressionTree { root, body })
}

enum Next<'a> {
    Connector(Connector),
    Leaf(Leaf),
    Op(&'a Map<String, Value>, String),
}

fn object<'a>(v: &'a Value, at: &str) -> Result<&'a Map<String, Value>, ExprError> {
    v.as_object().ok_or_else(|| err(at, "expected an object"))
}

fn float(v: Option<&Value>, at: &str, default: f64) -> Result<f64, ExprError> {
    match v {
        None => Ok(default),
        Some(x) => x
            .as_f64()
            .ok_or_else(|| err(at, "expected a finite number")),
    }
}

fn check_keys(obj: &Map<String, Value>, allowed: &[&str], at: &str) -> Result<(), ExprError> {
    for k in obj.keys() {
        if !allowed.contains(&k.as_str()) {
            return Err(err(at, format!("unexpected key {k:?}")));
        }
    }
    Ok(())
}

fn affine_node<'a>(obj: &'a Map<String, Value>, at: &str) -> Result<(Affine, Next<'a>), ExprError> {
    check_keys(obj, &["op", "alpha", "beta", "connector", "children"], at)?;
    let name = obj
        .get("op")
        .and_then(Value::as_str)
        .ok_or_else(|| err(at, "missing \"op\""))?;
    let op = Unary::from_name(name).ok_or_else(|| err(&format!("{at}.op"), format!("unknown unary {name:?}")))?;
    let alpha = float(obj.get("alpha"), &format!("{at}.alpha"), 1.0)?;
    let beta = float(obj.get("beta"), &format!("{at}.beta"), 0.0)?;
    let children = obj
        .get("children")
        .and_then(Value::as_array)
        .ok_or_else(|| err(at, "missing \"children\" array"))?;
    let affine = Affine { op, alpha, beta };
    match obj.get("connector") {
        Some(c) => {
            let cname = c.as_str().ok_or_else(|| err(&format!("{at}.connector"), "expected a string"))?;
            let bop = Binary::from_name(cname)
                .ok_or_else(|| err(&format!("{at}.connector"), format!("unknown binary {cname:?}")))?;
            let mut branches = Vec::with_capacity(children.len());
            for (i, child) in children.iter().enumerate() {
                branches.push(branch(child, &format!("{at}.children[{i}]"))?);
            }
            let n = branches.len();
            let bad = match bop {
                Binary::Div => n != 2,
                _ => n < 2,
            };
            if bad {
                return Err(ExprError::Arity {
                    position: at.to_string(),
                    connector: bop.name(),
                    expected: if bop == Binary::Div { "exactly 2" } else { "at least 2" },
                    found: n,
                });
            }
            Ok((affine, Next::Connector(Connector { op: bop, branches })))
        }
        None => {
            if children.len() != 1 {
                return Err(err(
                    at,
                    format!("node without connector needs exactly one child, found {}", children.len()),
                ));
            }
            let here = format!("{at}.children[0]");
            let child = object(&children[0], &here)?;
            if child.contains_key("leaf") {
                Ok((affine, Next::Leaf(leaf(child, &here)?)))
            } else {
                Ok((affine, Next::Op(child, here)))
            }
        }
    }
}

fn branch(v: &Value, at: &str) -> Result<Branch, ExprError> {
    let obj = object(v, at)?;
    if obj.contains_key("leaf") {
        // A bare leaf under a connector gets the implicit identity sequence.
        return Ok(Branch::leaf(vec![Affine::new(Unary::Id)], leaf(obj, at)?));
    }
    let mut ops = Vec::new();
    let mut cur = obj;
    let mut here = at.to_string();
    loop {
        let (a, next) = affine_node(cur, &here)?;
        ops.push(a);
        match next {
            Next::Connector(c) => return Ok(Branch::new(ops, Tail::Connector(c))),
            Next::Leaf(l) => return Ok(Branch::leaf(ops, l)),
            Next::Op(child, at_child) => {
                cur = child;
                here = at_child;
            }
        }
    }
}

fn leaf(obj: &Map<String, Value>, at: &str) -> Result<Leaf, ExprError> {
    check_keys(obj, &["leaf", "gamma", "vars"], at)?;
    let name = obj
        .get("leaf")
        .and_then(Value::as_str)
        .ok_or_else(|| err(at, "\"leaf\" must be a string"))?;
    let op = Unary::from_name(name).ok_or_else(|| err(&format!("{at}.leaf"), format!("unknown unary {name:?}")))?;
    let vars: Vec<usize> = obj
        .get("vars")
        .and_then(Value::as_array)
        .ok_or_else(|| err(at, "missing \"vars\" array"))?
        .iter()
        .enumerate()
        .map(|(i, v)| {
            v.as_u64()
                .map(|u| u as usize)
                .ok_or_else(|| err(&format!("{at}.vars[{i}]"), "expected a non-negative integer"))
        })
        .collect::<Result<_, _>>()?;
    let gamma = match obj.get("gamma") {
        None => vec![1.0; vars.len()],
        Some(g) => g
            .as_array()
            .ok_or_else(|| err(&format!("{at}.gamma"), "expected an array"))?
            .iter()
            .enumerate()
            .map(|(i, x)| float(Some(x), &format!("{at}.gamma[{i}]"), 0.0))
            .collect::<Result<_, _>>()?,
    };
    Ok(Leaf { op, gamma, vars })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::fixtures::{fig4_left, fig4_right};

    #[test]
    fn fig4_right_round_trips() {
        let t = fig4_right();
        let text = canonical_serialize(&t);
        assert_eq!(parse(&text).unwrap(), t.canonical());
        assert_eq!(parse(&text).unwrap(), t);
    }

    #[test]
    fn exact_text_layout() {
        let t = ExpressionTree::bare(
            Affine::with(Unary::Exp, 2.0, 1.0),
            Leaf::with_gamma(Unary::Id, vec![0], vec![0.5]),
        );
        assert_eq!(
            to_json(&t),
            r#"{"op":"exp","alpha":2.0,"beta":1.0,"children":[{"leaf":"id","gamma":[0.5],"vars":[0]}]}"#
        );
    }

    #[test]
    fn rejects_identity_inside_sequence() {
        let text = r#"{"op":"id","connector":"add","children":[
            {"op":"sin","children":[{"op":"id","children":[{"leaf":"id","vars":[0]}]}]},
            {"op":"cos","children":[{"leaf":"id","vars":[0]}]}]}"#;
        assert!(matches!(parse(text), Err(ExprError::IdentityInSequence { .. })));
    }

    #[test]
    fn rejects_div_with_three_children() {
        let text = r#"{"op":"id","connector":"div","children":[
            {"leaf":"id","vars":[0]},{"leaf":"id","vars":[1]},{"leaf":"id","vars":[2]}]}"#;
        assert!(matches!(parse(text), Err(ExprError::Arity { found: 3, .. })));
    }

    #[test]
    fn malformed_text_reports_position() {
        match parse("{\"op\": \"sin\",\n \"children\": [}") {
            Err(ExprError::Parse { position, .. }) => assert!(position.starts_with("line 2")),
            other => panic!("unexpected {other:?}"),
        }
        match parse(r#"{"op":"sin","children":[{"leaf":"nope","vars":[0]}]}"#) {
            Err(ExprError::Parse { position, .. }) => assert_eq!(position, "$.children[0].leaf"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn skeleton_key_ignores_constants_and_order() {
        let a = crate::expr::fixtures::pair(Unary::Sin, 0, Unary::Cos, 0);
        let b = crate::expr::fixtures::pair(Unary::Cos, 0, Unary::Sin, 0);
        assert_eq!(a.skeleton_key(), b.skeleton_key());
        let scaled = a.with_parameters(&vec![3.0; a.parameter_count()]).unwrap();
        assert_eq!(a.skeleton_key(), scaled.skeleton_key());
        assert_eq!(a.skeleton_key(), "id[add](cos>id{0},sin>id{0})");
        let left = fig4_left();
        assert_eq!(
            left.skeleton_key(),
            "tan[add](exp.square>id{0},exp[add](exp.square>id{2},square>id{1}))"
        );
    }
}
