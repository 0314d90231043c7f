//! Symbol priors mined from an expression corpus.
//!
//! A [`PriorModel`] holds one smoothed categorical per decision context
//! (see [`crate::grammar`]), keyed by role and `parent|s1,s2,s3|level`.
//! Sibling decisions form the horizontal table; connector, continuation
//! and leaf decisions form the vertical tables. Legal tokens never seen in
//! a context receive the floor `epsilon`, and the observed ones share the
//! rest in proportion to their normalized counts. Hard-constraint
//! adjacencies get exactly zero.

mod counts;
mod hc1;

pub use counts::{normalized_count, symbol_counts, CountTable};
pub use hc1::{build_hc1, Hc1Pattern, Hc1Set};

use crate::error::PriorError;
use crate::expr::{text, ExpressionTree, Unary, DEFAULT_MAX_DEPTH};
use crate::grammar::{parse_key, registry, Context, Mask, Role, SiblingRank, Token, N_TOKENS};
use crate::par::Execution;
use serde_json::{json, Map, Value};
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

pub const DEFAULT_EPSILON: f64 = 1e-3;

/// Reads a `.jsonl` corpus, one tree per non-blank line.
pub fn read_corpus(reader: impl Read) -> Result<Vec<ExpressionTree>, PriorError> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = i + 1;
        let tree = text::parse(&line).map_err(|source| PriorError::Record { record, source })?;
        if tree.variables().is_empty() {
            return Err(PriorError::NoVariables(record));
        }
        out.push(tree);
    }
    Ok(out)
}

pub fn read_corpus_path(path: impl AsRef<Path>) -> Result<Vec<ExpressionTree>, PriorError> {
    read_corpus(std::fs::File::open(path)?)
}

/// Empirical structure statistics with normalized-count weighting.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StructuralDistributions {
    pub root: BTreeMap<Unary, f64>,
    pub leaf: BTreeMap<Unary, f64>,
    pub depth: BTreeMap<usize, f64>,
    pub width: BTreeMap<usize, f64>,
}

fn normalize<K: Ord>(m: &mut BTreeMap<K, f64>) {
    let total: f64 = m.values().sum();
    if total > 0.0 {
        m.values_mut().for_each(|v| *v /= total);
    }
}

pub fn structural_distributions(corpus: &[ExpressionTree]) -> StructuralDistributions {
    let mut d = StructuralDistributions::default();
    for t in corpus {
        let w = 1.0 / t.variables().len().max(1) as f64;
        *d.root.entry(t.root.op).or_default() += w;
        *d.depth.entry(t.depth()).or_default() += w;
        *d.width.entry(t.width()).or_default() += w;
        t.for_each_leaf(&mut |l| *d.leaf.entry(l.op).or_default() += w * l.vars.len() as f64);
    }
    normalize(&mut d.root);
    normalize(&mut d.leaf);
    normalize(&mut d.depth);
    normalize(&mut d.width);
    d
}

#[derive(Clone, Debug)]
pub struct EstimateOptions {
    pub epsilon: f64,
    /// Levels deeper than this share the last bucket.
    pub max_level: usize,
    pub hc1: Hc1Set,
    pub execution: Execution,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions {
            epsilon: DEFAULT_EPSILON,
            max_level: DEFAULT_MAX_DEPTH,
            hc1: build_hc1(),
            execution: Execution::default(),
        }
    }
}

/// Where a looked-up distribution came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Lookup {
    Exact,
    Level,
    Uniform,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PriorModel {
    pub epsilon: f64,
    pub max_level: usize,
    /// Smoothed categoricals per role and context key. Keys `*||h` hold the
    /// level-only fallback.
    pub tables: BTreeMap<Role, BTreeMap<String, [f64; N_TOKENS]>>,
    pub structure: StructuralDistributions,
    pub hc1: Hc1Set,
    /// Floored combinations as `role:key>symbol`.
    pub hc2: Vec<String>,
    pub sibling_rank: SiblingRank,
}

/// Tokens zeroed by adjacency constraints below a unary parent.
fn forbidden(hc1: &Hc1Set, ctx: &Context) -> Mask {
    let mut m = [false; N_TOKENS];
    if matches!(ctx.role, Role::Continuation | Role::Leaf) {
        if let Some(Token::Unary(p)) = ctx.parent {
            for u in Unary::ALL {
                m[u.index()] = hc1.forbids_adjacent(p, u);
            }
        }
    }
    m
}

/// Smooths raw counts over `support`: unseen legal tokens get `epsilon`,
/// seen ones share `1 - m * epsilon` in proportion to their counts.
fn floor(
    counts: &[f64; N_TOKENS],
    support: &Mask,
    zero: &Mask,
    epsilon: f64,
    mut on_floor: impl FnMut(Token),
) -> Result<[f64; N_TOKENS], PriorError> {
    let legal: Vec<usize> = (0..N_TOKENS).filter(|&i| support[i] && !zero[i]).collect();
    let seen_total: f64 = legal.iter().map(|&i| counts[i]).sum();
    let mut p = [0.0; N_TOKENS];
    if legal.is_empty() {
        return Ok(p);
    }
    if seen_total <= 0.0 {
        let u = 1.0 / legal.len() as f64;
        legal.iter().for_each(|&i| p[i] = u);
        return Ok(p);
    }
    let unseen = legal.iter().filter(|&&i| counts[i] <= 0.0).count();
    let kept = 1.0 - unseen as f64 * epsilon;
    if kept <= 0.0 {
        return Err(PriorError::Epsilon { epsilon, unseen });
    }
    for &i in &legal {
        if counts[i] > 0.0 {
            p[i] = kept * counts[i] / seen_total;
        } else {
            p[i] = epsilon;
            if epsilon > 0.0 {
                on_floor(Token::from_index(i));
            }
        }
    }
    Ok(p)
}

/// Builds the smoothed prior model from a corpus.
pub fn estimate_conditional(
    corpus: &[ExpressionTree],
    opts: &EstimateOptions,
) -> Result<PriorModel, PriorError> {
    if corpus.is_empty() {
        return Err(PriorError::EmptyCorpus);
    }
    if !(0.0..1.0).contains(&opts.epsilon) {
        return Err(PriorError::Epsilon {
            epsilon: opts.epsilon,
            unseen: 0,
        });
    }
    let table = CountTable::build(corpus, opts.max_level, opts.execution);
    PriorModel::from_counts(&table, structural_distributions(corpus), opts)
}

impl PriorModel {
    /// A prior with no tables: every lookup is uniform over the legal
    /// support minus hard-constraint adjacencies.
    pub fn uniform(max_level: usize) -> PriorModel {
        PriorModel {
            epsilon: DEFAULT_EPSILON,
            max_level,
            tables: BTreeMap::new(),
            structure: StructuralDistributions::default(),
            hc1: build_hc1(),
            hc2: Vec::new(),
            sibling_rank: SiblingRank::new(),
        }
    }

    pub fn from_counts(
        table: &CountTable,
        structure: StructuralDistributions,
        opts: &EstimateOptions,
    ) -> Result<PriorModel, PriorError> {
        let mut tables: BTreeMap<Role, BTreeMap<String, [f64; N_TOKENS]>> = BTreeMap::new();
        let mut hc2 = Vec::new();
        for ((role, key), counts) in &table.contexts {
            let ctx = parse_key(*role, key)
                .ok_or_else(|| PriorError::Format(format!("bad context key {key:?}")))?;
            let p = floor(counts, &ctx.support(), &forbidden(&opts.hc1, &ctx), opts.epsilon, |t| {
                hc2.push(format!("{}:{key}>{}", role.name(), t.name()))
            })?;
            tables.entry(*role).or_default().insert(key.clone(), p);
        }
        for ((role, level), counts) in &table.levels {
            let support = role.support(crate::grammar::SIBLING_CONTEXT);
            let p = floor(counts, &support, &[false; N_TOKENS], opts.epsilon, |_| {})?;
            tables
                .entry(*role)
                .or_default()
                .insert(format!("*||{level}"), p);
        }
        Ok(PriorModel {
            epsilon: opts.epsilon,
            max_level: opts.max_level,
            tables,
            structure,
            hc1: opts.hc1.clone(),
            hc2,
            sibling_rank: table.sibling_rank(),
        })
    }

    /// Smoothed distribution for a decision context, falling back to the
    /// level-only table and then to uniform over the legal support.
    pub fn lookup(&self, ctx: &Context) -> ([f64; N_TOKENS], Lookup) {
        let ctx = Context {
            level: ctx.level.min(self.max_level),
            ..ctx.clone()
        };
        if let Some(t) = self.tables.get(&ctx.role) {
            if let Some(p) = t.get(&ctx.key()) {
                return (*p, Lookup::Exact);
            }
            if let Some(p) = t.get(&ctx.fallback_key()) {
                log::debug!("no prior context {}:{}; using level table", ctx.role.name(), ctx.key());
                return (*p, Lookup::Level);
            }
        }
        let support = ctx.support();
        let zero = forbidden(&self.hc1, &ctx);
        let p = floor(&[0.0; N_TOKENS], &support, &zero, 0.0, |_| {}).expect("zero epsilon never fails");
        (p, Lookup::Uniform)
    }

    /// Smoothed probability of `token` in a context.
    pub fn probability(&self, ctx: &Context, token: Token) -> f64 {
        self.lookup(ctx).0[token.index()]
    }

    pub fn horizontal(&self) -> Option<&BTreeMap<String, [f64; N_TOKENS]>> {
        self.tables.get(&Role::Sibling)
    }

    pub fn to_json(&self) -> Value {
        let cat = |p: &[f64; N_TOKENS], support: &Mask| -> Value {
            let m: Map<String, Value> = (0..N_TOKENS)
                .filter(|&i| support[i] || p[i] != 0.0)
                .map(|i| (Token::from_index(i).name().to_string(), json!(p[i])))
                .collect();
            Value::Object(m)
        };
        let role_table = |role: Role| -> Value {
            let mut m = Map::new();
            if let Some(t) = self.tables.get(&role) {
                for (k, p) in t {
                    let support = parse_key(role, k)
                        .map(|c| c.support())
                        .unwrap_or_else(|| role.support(crate::grammar::SIBLING_CONTEXT));
                    m.insert(k.clone(), cat(p, &support));
                }
            }
            Value::Object(m)
        };
        let unary_map = |m: &BTreeMap<Unary, f64>| -> Value {
            Value::Object(m.iter().map(|(u, p)| (u.name().to_string(), json!(p))).collect())
        };
        let int_map = |m: &BTreeMap<usize, f64>| -> Value {
            Value::Object(m.iter().map(|(k, p)| (k.to_string(), json!(p))).collect())
        };
        json!({
            "symbol_registry": registry(),
            "epsilon": self.epsilon,
            "max_level": self.max_level,
            "root": unary_map(&self.structure.root),
            "leaf": unary_map(&self.structure.leaf),
            "depth": int_map(&self.structure.depth),
            "width": int_map(&self.structure.width),
            "vertical": {
                "root": role_table(Role::Root),
                "connector": role_table(Role::Connector),
                "continuation": role_table(Role::Continuation),
                "leaf": role_table(Role::Leaf),
            },
            "horizontal": role_table(Role::Sibling),
            "hc1": self.hc1.patterns.iter().map(|p| p.to_string()).collect::<Vec<_>>(),
            "hc2": self.hc2,
            "sibling_rank": unary_map(&self.sibling_rank),
        })
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_json()).expect("prior serializes")
    }

    pub fn from_json(v: &Value) -> Result<PriorModel, PriorError> {
        let fmt = |m: String| PriorError::Format(m);
        let obj = v.as_object().ok_or_else(|| fmt("top level must be an object".into()))?;
        if let Some(reg) = obj.get("symbol_registry") {
            let names: Vec<&str> = reg
                .as_array()
                .ok_or_else(|| fmt("symbol_registry must be an array".into()))?
                .iter()
                .map(|s| s.as_str().unwrap_or(""))
                .collect();
            if names != registry() {
                return Err(fmt(format!("symbol_registry {names:?} does not match {:?}", registry())));
            }
        }
        let epsilon = obj.get("epsilon").and_then(Value::as_f64).unwrap_or(DEFAULT_EPSILON);
        let max_level = obj
            .get("max_level")
            .and_then(Value::as_u64)
            .map_or(DEFAULT_MAX_DEPTH, |x| x as usize);
        let unary_map = |key: &str| -> Result<BTreeMap<Unary, f64>, PriorError> {
            let mut out = BTreeMap::new();
            if let Some(m) = obj.get(key).and_then(Value::as_object) {
                for (k, p) in m {
                    let u = Unary::from_name(k).ok_or_else(|| fmt(format!("{key}: unknown symbol {k:?}")))?;
                    out.insert(u, p.as_f64().ok_or_else(|| fmt(format!("{key}.{k} must be a number")))?);
                }
            }
            Ok(out)
        };
        let int_map = |key: &str| -> Result<BTreeMap<usize, f64>, PriorError> {
            let mut out = BTreeMap::new();
            if let Some(m) = obj.get(key).and_then(Value::as_object) {
                for (k, p) in m {
                    let n = k.parse().map_err(|_| fmt(format!("{key}: bad bucket {k:?}")))?;
                    out.insert(n, p.as_f64().ok_or_else(|| fmt(format!("{key}.{k} must be a number")))?);
                }
            }
            Ok(out)
        };
        let mut tables = BTreeMap::new();
        let mut read_table = |role: Role, v: Option<&Value>| -> Result<(), PriorError> {
            let Some(m) = v.and_then(Value::as_object) else { return Ok(()) };
            let t: &mut BTreeMap<String, [f64; N_TOKENS]> = tables.entry(role).or_default();
            for (key, dist) in m {
                if !key.starts_with("*|") && parse_key(role, key).is_none() {
                    return Err(fmt(format!("{}: bad context key {key:?}", role.name())));
                }
                let mut p = [0.0; N_TOKENS];
                for (name, x) in dist.as_object().ok_or_else(|| fmt(format!("{key}: expected an object")))? {
                    let tok = Token::from_name(name).ok_or_else(|| fmt(format!("{key}: unknown symbol {name:?}")))?;
                    let x = x.as_f64().filter(|x| (0.0..=1.0).contains(x)).ok_or_else(|| {
                        fmt(format!("{key}.{name} must be a probability"))
                    })?;
                    p[tok.index()] = x;
                }
                let total: f64 = p.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(fmt(format!("{}:{key} sums to {total}", role.name())));
                }
                t.insert(key.clone(), p);
            }
            Ok(())
        };
        let vertical = obj.get("vertical");
        for (role, name) in [
            (Role::Root, "root"),
            (Role::Connector, "connector"),
            (Role::Continuation, "continuation"),
            (Role::Leaf, "leaf"),
        ] {
            read_table(role, vertical.and_then(|v| v.get(name)))?;
        }
        read_table(Role::Sibling, obj.get("horizontal"))?;
        tables.retain(|_, t| !t.is_empty());
        let hc1 = match obj.get("hc1") {
            None => build_hc1(),
            Some(v) => Hc1Set {
                patterns: v
                    .as_array()
                    .ok_or_else(|| fmt("hc1 must be an array".into()))?
                    .iter()
                    .map(|p| p.as_str().unwrap_or("").parse::<Hc1Pattern>().map_err(fmt))
                    .collect::<Result<_, _>>()?,
            },
        };
        let hc2 = obj
            .get("hc2")
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(|s| s.as_str().map(str::to_string)).collect())
            .unwrap_or_default();
        Ok(PriorModel {
            epsilon,
            max_level,
            tables,
            structure: StructuralDistributions {
                root: unary_map("root")?,
                leaf: unary_map("leaf")?,
                depth: int_map("depth")?,
                width: int_map("width")?,
            },
            hc1,
            hc2,
            sibling_rank: unary_map("sibling_rank")?,
        })
    }

    pub fn from_json_str(s: &str) -> Result<PriorModel, PriorError> {
        Self::from_json(&serde_json::from_str(s)?)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<PriorModel, PriorError> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}
