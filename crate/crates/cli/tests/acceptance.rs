//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any fails. Numeric arguments select a subset, e.g.
//! `cargo test --test acceptance -- 1 5`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Command;
use std::time::Instant;
use symprior::bench::{self, check_recovery, generate_data, BenchOptions, Problem, Variant};
use symprior::controller::{evaluate, kl_and_grad, kl_divergence, log_prob_and_grad, sample};
use symprior::controller::{ControllerConfig, ControllerParams, SampledSkeleton};
use symprior::expr::{canonical_serialize, parse};
use symprior::grammar::{Role, Token, N_TOKENS};
use symprior::optimize::{coarse_tune, FitConfig, Objective};
use symprior::priors::{estimate_conditional, normalized_count, EstimateOptions, PriorModel};
use symprior::search::{self, kl_weight, reward, risk_quantile, PolicyOptimizer, PolicyTrainer, SearchConfig};
use symprior::{Dataset, ExpressionTree};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn main() {
    let checks: [(usize, fn() -> Outcome); 11] = [
        (1, prior_oracle),
        (2, normalized_count_insensitivity),
        (3, hard_constraints),
        (4, gradient_checks),
        (5, spot_values),
        (6, linear_fit),
        (7, quantile_oracle),
        (8, toy_recovery),
        (9, variant_ordering),
        (10, kl_pull),
        (11, cli_reproducibility),
    ];
    let selected: BTreeSet<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, check) in checks {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let o = check();
        let secs = start.elapsed().as_secs_f64();
        println!(
            "criterion {n}: {} ({secs:.1}s) {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn tree(v: Value) -> ExpressionTree {
    parse(&v.to_string()).expect("valid tree")
}

fn leaf(op: &str, vars: &[usize]) -> Value {
    json!({"leaf": op, "vars": vars})
}

fn chain(ops: &[&str], tail: Value) -> Value {
    ops.iter()
        .rev()
        .fold(tail, |child, op| json!({"op": op, "children": [child]}))
}

fn join(root: &str, connector: &str, children: Vec<Value>) -> Value {
    json!({"op": root, "connector": connector, "children": children})
}

// ---------------------------------------------------------------------------
// 1. Prior tables against an independent enumeration over the JSON form.

fn oracle_corpus() -> Vec<Value> {
    let b = |op: &str, v: usize| chain(&[op], leaf("id", &[v]));
    vec![
        join("id", "add", vec![b("sin", 0), b("cos", 1)]),
        join("id", "mul", vec![b("exp", 0), b("id", 1)]),
        join("sqrt", "add", vec![b("square", 0), b("square", 1), b("square", 2)]),
        join("id", "div", vec![b("log", 0), b("id", 1)]),
        chain(&["tan"], leaf("id", &[0, 1])),
        join("id", "add", vec![b("cos", 0), b("cos", 1), b("sin", 2), b("exp", 3)]),
        join("exp", "add", vec![b("sin", 0), chain(&["id"], leaf("square", &[0]))]),
        chain(&["square"], leaf("sqrt", &[0, 1])),
        join("id", "add", vec![b("log", 0), b("exp", 0), b("sin", 1), b("cos", 1), b("square", 0)]),
        join("log", "mul", vec![b("cos", 0), b("sqrt", 1), b("id", 2)]),
    ]
}

const UNARIES: [&str; 8] = ["id", "sin", "cos", "tan", "exp", "log", "sqrt", "square"];
const BINARIES: [&str; 3] = ["add", "mul", "div"];

struct Enumeration {
    contexts: BTreeMap<(String, String), BTreeMap<String, f64>>,
    levels: BTreeMap<(String, usize), BTreeMap<String, f64>>,
}

struct Walker<'a> {
    rank: &'a BTreeMap<String, f64>,
    weight: f64,
    out: &'a mut Enumeration,
}

impl Walker<'_> {
    fn emit(&mut self, role: &str, parent: &str, sibs: &[String], level: usize, token: &str, mult: f64) {
        let key = format!("{parent}|{}|{level}", sibs.join(","));
        let w = self.weight * mult;
        *self
            .out
            .contexts
            .entry((role.into(), key))
            .or_default()
            .entry(token.into())
            .or_default() += w;
        *self
            .out
            .levels
            .entry((role.into(), level))
            .or_default()
            .entry(token.into())
            .or_default() += w;
    }

    fn truncated(&self, firsts: &[String]) -> Vec<String> {
        let score = |s: &String| self.rank.get(s).copied().unwrap_or(0.0);
        let mut v = firsts.to_vec();
        v.sort_by(|a, b| score(b).partial_cmp(&score(a)).unwrap().then(a.cmp(b)));
        v.truncate(3);
        v.sort();
        v
    }

    /// Decisions below the unary `node` whose operator is `parent`.
    fn below(&mut self, node: &Value, parent: &str, level: usize) {
        let children = node["children"].as_array().unwrap();
        match node.get("connector").and_then(Value::as_str) {
            None => {
                let child = &children[0];
                let op = child["leaf"].as_str().expect("no unary chains below the root");
                let vars = child["vars"].as_array().unwrap().len() as f64;
                self.emit("connector", parent, &[], level, "leaf", 1.0);
                self.emit("leaf", parent, &[], level, op, vars);
            }
            Some(bin) => {
                self.emit("connector", parent, &[], level, bin, 1.0);
                let mut firsts: Vec<String> = Vec::new();
                for child in children {
                    let mut seq: Vec<&str> = Vec::new();
                    let mut cur = child;
                    while cur.get("leaf").is_none() {
                        seq.push(cur["op"].as_str().unwrap());
                        if cur.get("connector").is_some() {
                            break;
                        }
                        cur = &cur["children"][0];
                    }
                    let sibs = self.truncated(&firsts);
                    self.emit("sibling", bin, &sibs, level + 1, seq[0], 1.0);
                    firsts.push(seq[0].to_string());
                    if seq[0] != "id" {
                        for k in 1..3 {
                            let tok = seq.get(k).copied().unwrap_or("stop");
                            self.emit("continuation", seq[k - 1], &[], level + 1, tok, 1.0);
                            if tok == "stop" {
                                break;
                            }
                        }
                    }
                    // The last unary of the sequence is `cur` when it holds the
                    // connector, otherwise the node just above the leaf.
                    let mut last = child;
                    for _ in 1..seq.len() {
                        last = &last["children"][0];
                    }
                    self.below(last, seq[seq.len() - 1], level + 1);
                }
                if bin != "div" {
                    let sibs = self.truncated(&firsts);
                    self.emit("sibling", bin, &sibs, level + 1, "stop", 1.0);
                }
            }
        }
    }
}

fn json_counts(node: &Value, counts: &mut BTreeMap<String, f64>, vars: &mut BTreeSet<u64>) {
    if let Some(op) = node.get("leaf").and_then(Value::as_str) {
        let vs = node["vars"].as_array().unwrap();
        vs.iter().for_each(|v| {
            vars.insert(v.as_u64().unwrap());
        });
        *counts.entry(op.into()).or_default() += vs.len() as f64;
        return;
    }
    *counts.entry(node["op"].as_str().unwrap().into()).or_default() += 1.0;
    if let Some(c) = node.get("connector").and_then(Value::as_str) {
        *counts.entry(c.into()).or_default() += 1.0;
    }
    for child in node["children"].as_array().unwrap() {
        json_counts(child, counts, vars);
    }
}

fn enumerate(corpus: &[Value]) -> Enumeration {
    let mut rank: BTreeMap<String, f64> = BTreeMap::new();
    let mut per: Vec<(BTreeMap<String, f64>, f64)> = Vec::new();
    for e in corpus {
        let mut counts = BTreeMap::new();
        let mut vars = BTreeSet::new();
        json_counts(e, &mut counts, &mut vars);
        per.push((counts, vars.len() as f64));
    }
    for (counts, nv) in &per {
        for (s, c) in counts {
            if UNARIES.contains(&s.as_str()) {
                *rank.entry(s.clone()).or_default() += c / nv / corpus.len() as f64;
            }
        }
    }
    let mut out = Enumeration {
        contexts: BTreeMap::new(),
        levels: BTreeMap::new(),
    };
    for (e, (_, nv)) in corpus.iter().zip(&per) {
        let mut w = Walker {
            rank: &rank,
            weight: 1.0 / nv,
            out: &mut out,
        };
        let root = e["op"].as_str().unwrap();
        w.emit("root", "^", &[], 0, root, 1.0);
        w.below(e, root, 0);
    }
    out
}

fn support(role: &str, siblings: usize) -> Vec<&'static str> {
    match role {
        "root" | "leaf" => UNARIES.to_vec(),
        "connector" => BINARIES.iter().copied().chain(["leaf"]).collect(),
        "sibling" if siblings >= 2 => UNARIES.iter().copied().chain(["stop"]).collect(),
        "sibling" => UNARIES.to_vec(),
        _ => UNARIES[1..].iter().copied().chain(["stop"]).collect(),
    }
}

fn smoothed(counts: &BTreeMap<String, f64>, legal: &[&str], eps: f64) -> BTreeMap<String, f64> {
    let total: f64 = legal.iter().map(|t| counts.get(*t).copied().unwrap_or(0.0)).sum();
    let unseen = legal.iter().filter(|t| counts.get(**t).copied().unwrap_or(0.0) == 0.0).count();
    legal
        .iter()
        .map(|t| {
            let c = counts.get(*t).copied().unwrap_or(0.0);
            let p = if c > 0.0 { (1.0 - unseen as f64 * eps) * c / total } else { eps };
            (t.to_string(), p)
        })
        .collect()
}

fn prior_oracle() -> Outcome {
    let start = Instant::now();
    let values = oracle_corpus();
    let corpus: Vec<ExpressionTree> = values.iter().map(|v| tree(v.clone())).collect();
    let deepest = corpus.iter().map(|t| t.depth()).max().unwrap();
    let model = estimate_conditional(&corpus, &EstimateOptions::default()).unwrap();
    let eps = model.epsilon;
    let enumeration = enumerate(&values);
    let forbidden = |parent: &str, tok: &str| {
        matches!((parent, tok), ("exp", "exp") | ("log", "log") | ("exp", "log") | ("log", "exp"))
    };
    let mut expected: BTreeMap<(String, String), BTreeMap<String, f64>> = BTreeMap::new();
    for ((role, key), counts) in &enumeration.contexts {
        let mut parts = key.split('|');
        let parent = parts.next().unwrap();
        let sibs = parts.next().unwrap();
        let n_sibs = if sibs.is_empty() { 0 } else { sibs.split(',').count() };
        let legal: Vec<&str> = support(role, n_sibs)
            .into_iter()
            .filter(|t| !(matches!(role.as_str(), "continuation" | "leaf") && forbidden(parent, t)))
            .collect();
        expected.insert((role.clone(), key.clone()), smoothed(counts, &legal, eps));
    }
    for ((role, level), counts) in &enumeration.levels {
        expected.insert((role.clone(), format!("*||{level}")), smoothed(counts, &support(role, 3), eps));
    }
    let mut actual: BTreeMap<(String, String), [f64; N_TOKENS]> = BTreeMap::new();
    for (role, table) in &model.tables {
        for (key, p) in table {
            actual.insert((role.name().to_string(), key.clone()), *p);
        }
    }
    let expected_keys: BTreeSet<_> = expected.keys().cloned().collect();
    let actual_keys: BTreeSet<_> = actual.keys().cloned().collect();
    if expected_keys != actual_keys {
        let missing: Vec<_> = expected_keys.difference(&actual_keys).collect();
        let extra: Vec<_> = actual_keys.difference(&expected_keys).collect();
        return outcome(false, format!("context sets differ; missing {missing:?}, extra {extra:?}"));
    }
    let mut worst: f64 = 0.0;
    let mut entries = 0;
    for (k, dist) in &expected {
        let p = &actual[k];
        for t in Token::all() {
            let want = dist.get(t.name()).copied().unwrap_or(0.0);
            worst = worst.max((p[t.index()] - want).abs());
            entries += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-12 && secs < 1.0 && deepest <= 4,
        format!(
            "{} contexts, {entries} probabilities, max abs diff {worst:.1e}, corpus depth {deepest}, {secs:.3}s",
            expected.len()
        ),
    )
}

// ---------------------------------------------------------------------------
// 2.

fn cos_sum(n: usize) -> ExpressionTree {
    tree(join("id", "add", (0..n).map(|v| chain(&["cos"], leaf("id", &[v]))).collect()))
}

fn normalized_count_insensitivity() -> Outcome {
    let cos = Token::from_name("cos").unwrap();
    let values: Vec<f64> = [2, 5, 10].iter().map(|&n| normalized_count(&[cos_sum(n)], cos)).collect();
    let tables: Vec<f64> = [2, 5, 10]
        .iter()
        .map(|&n| {
            let m = estimate_conditional(&[cos_sum(n)], &EstimateOptions::default()).unwrap();
            m.tables[&Role::Sibling]["add||1"][cos.index()]
        })
        .collect();
    let same = values.windows(2).all(|w| w[0] == w[1]) && tables.windows(2).all(|w| w[0] == w[1]);
    outcome(same, format!("normalized cos counts {values:?}, first-sibling P(cos) {tables:?}"))
}

// ---------------------------------------------------------------------------
// 3.

fn random_prior(rng: &mut impl Rng) -> PriorModel {
    let mut model = PriorModel::uniform(8);
    for role in Role::ALL {
        let support = role.support(3);
        let mut table = BTreeMap::new();
        for level in 0..=8 {
            let p: [f64; N_TOKENS] = std::array::from_fn(|i| {
                if support[i] {
                    rng.random_range(0.0f64..1.0).powi(3) + 1e-3
                } else {
                    0.0
                }
            });
            let total: f64 = p.iter().sum();
            table.insert(format!("*||{level}"), p.map(|v| v / total));
        }
        model.tables.insert(role, table);
    }
    model
}

/// Root-to-leaf symbol paths read from the serialized tree; unary chains
/// and connectors appear in order, the leaf operator last.
fn json_paths(node: &Value, prefix: &mut Vec<String>, out: &mut Vec<Vec<String>>) {
    if let Some(op) = node.get("leaf").and_then(Value::as_str) {
        let mut p = prefix.clone();
        p.push(op.into());
        out.push(p);
        return;
    }
    prefix.push(node["op"].as_str().unwrap().into());
    let pushed_connector = match node.get("connector").and_then(Value::as_str) {
        Some(c) => {
            prefix.push(c.into());
            true
        }
        None => false,
    };
    for child in node["children"].as_array().unwrap() {
        json_paths(child, prefix, out);
    }
    if pushed_connector {
        prefix.pop();
    }
    prefix.pop();
}

fn path_violation(path: &[String]) -> Option<String> {
    for w in path.windows(2) {
        let pair = (w[0].as_str(), w[1].as_str());
        if matches!(pair, ("exp", "exp") | ("log", "log") | ("exp", "log") | ("log", "exp")) {
            return Some(format!("{}>{}", w[0], w[1]));
        }
    }
    let trig = path.iter().filter(|s| matches!(s.as_str(), "sin" | "cos" | "tan")).count();
    (trig > 2).then(|| format!("{trig} trig symbols"))
}

fn hard_constraints() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = ControllerConfig::default();
    let mut violations = Vec::new();
    let mut paths = 0;
    for _ in 0..3 {
        let prior = random_prior(&mut rng);
        let params = ControllerParams::init(cfg.hidden, cfg.max_depth, &mut rng);
        for _ in 0..10_000 {
            let s = sample(&params, &prior, &cfg, 2, &mut rng);
            let v: Value = serde_json::from_str(&canonical_serialize(&s.tree)).unwrap();
            let mut found = Vec::new();
            json_paths(&v, &mut Vec::new(), &mut found);
            paths += found.len();
            for p in found {
                if let Some(why) = path_violation(&p) {
                    violations.push(format!("{}: {why}", s.tree.skeleton_key()));
                }
                let lib = s.tree.subsequences().iter().find_map(|q| prior.hc1.path_violation(q));
                if let Some(why) = lib {
                    violations.push(format!("{}: {why}", s.tree.skeleton_key()));
                }
            }
        }
    }
    outcome(
        violations.is_empty(),
        format!(
            "30000 samples, {paths} paths, {} violations {:?}",
            violations.len(),
            violations.iter().take(3).collect::<Vec<_>>()
        ),
    )
}

// ---------------------------------------------------------------------------
// 4.

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Five-point central difference, accurate to `O(h^4)`.
fn central(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut at = |d: f64| {
        let mut y = x.to_vec();
        y[i] += d;
        f(&y)
    };
    (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h)
}

fn controller_instance(rng: &mut ChaCha8Rng, prior: &PriorModel, bias: bool) -> (ControllerParams, SampledSkeleton) {
    let cfg = ControllerConfig {
        hidden: 16,
        prior_logit_bias: bias,
        ..Default::default()
    };
    let mut params = ControllerParams::init(cfg.hidden, cfg.max_depth, rng);
    params.weights.iter_mut().for_each(|w| *w *= 5.0);
    loop {
        let s = sample(&params, prior, &cfg, 2, rng);
        if s.steps.len() >= 4 {
            return (params, s);
        }
    }
}

fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let prior = estimate_conditional(
        &oracle_corpus().into_iter().map(tree).collect::<Vec<_>>(),
        &EstimateOptions::default(),
    )
    .unwrap();
    let h = 1e-3;
    let mut worst = [0.0f64; 3];
    let mut coords = [0usize; 3];
    for k in 0..20 {
        let (params, skel) = controller_instance(&mut rng, &prior, k % 2 == 0);
        let (_, g) = log_prob_and_grad(&params, &skel).unwrap();
        let mut f = |w: &[f64]| {
            let p = ControllerParams {
                layout: params.layout,
                weights: w.to_vec(),
            };
            evaluate(&p, &skel).unwrap().log_prob
        };
        for i in 0..params.len() {
            let e = rel_err(g[i], central(&mut f, &params.weights, i, h));
            worst[0] = worst[0].max(e);
        }
        coords[0] += params.len();

        let (params, skel) = controller_instance(&mut rng, &prior, k % 2 == 1);
        let (_, g) = kl_and_grad(&params, &skel, &prior).unwrap();
        let mut f = |w: &[f64]| {
            let p = ControllerParams {
                layout: params.layout,
                weights: w.to_vec(),
            };
            evaluate(&p, &skel).unwrap().kl_avg
        };
        for i in 0..params.len() {
            worst[1] = worst[1].max(rel_err(g[i], central(&mut f, &params.weights, i, h)));
        }
        coords[1] += params.len();
    }
    let mut fitted = 0;
    let cfg = ControllerConfig::default();
    let params = ControllerParams::zeros(cfg.hidden, cfg.max_depth);
    while fitted < 20 {
        let s = sample(&params, &prior, &cfg, 2, &mut rng);
        let theta: Vec<f64> = (0..s.tree.parameter_count()).map(|_| rng.random_range(0.3..1.2)).collect();
        let x: Vec<Vec<f64>> = (0..2).map(|_| (0..60).map(|_| rng.random_range(0.5..1.5)).collect()).collect();
        let y: Vec<f64> = (0..60).map(|_| rng.random_range(-1.0..1.0)).collect();
        let data = Dataset::from_columns(x, y).unwrap();
        let mut obj = Objective::new(&s.tree, &data).unwrap();
        let mut g = vec![0.0; theta.len()];
        let v = obj.nrmse_and_grad(&theta, &mut g);
        if !v.is_finite() || v > 1e6 {
            continue;
        }
        let mut f = |t: &[f64]| obj.nrmse(t);
        let fd: Vec<f64> = (0..theta.len()).map(|i| central(&mut f, &theta, i, 1e-4)).collect();
        if fd.iter().any(|d| !d.is_finite()) {
            continue;
        }
        for i in 0..theta.len() {
            worst[2] = worst[2].max(rel_err(g[i], fd[i]));
        }
        coords[2] += theta.len();
        fitted += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst.iter().all(|&w| w < 1e-4) && secs < 30.0,
        format!(
            "max rel err: log-prob {:.1e} ({} coords), KL {:.1e} ({} coords), theta {:.1e} ({} coords); 20 instances each",
            worst[0], coords[0], worst[1], coords[1], worst[2], coords[2]
        ),
    )
}

// ---------------------------------------------------------------------------
// 5.

fn spot_values() -> Outcome {
    let mut bad = Vec::new();
    if reward(0.0) != 1.0 || reward(1.0) != 0.5 {
        bad.push(format!("reward {} {}", reward(0.0), reward(1.0)));
    }
    let kl = kl_divergence(&[1.0, 0.0], &[0.5, 0.5]);
    if (kl - std::f64::consts::LN_2).abs() > 1e-9 {
        bad.push(format!("kl {kl}"));
    }
    let w = kl_weight(100, 0.5, 0.01);
    if (w - 0.5 * (-1.0f64).exp()).abs() > 1e-12 {
        bad.push(format!("kl_weight {w}"));
    }
    let sq = |v: usize| chain(&["square"], leaf("id", &[v]));
    let left = tree(join(
        "tan",
        "add",
        vec![
            chain(&["exp", "square"], leaf("id", &[0])),
            join("exp", "add", vec![sq(1), chain(&["exp", "square"], leaf("id", &[2]))]),
        ],
    ));
    let right = tree(join("sqrt", "add", (0..3).map(sq).collect()));
    let shapes = [(left.width(), left.depth()), (right.width(), right.depth())];
    if shapes != [(2, 7), (3, 4)] {
        bad.push(format!("fig. 4 shapes {shapes:?}"));
    }
    outcome(
        bad.is_empty(),
        if bad.is_empty() {
            format!("reward, KL {kl:.12}, kl_weight {w:.12}, shapes {shapes:?}")
        } else {
            bad.join("; ")
        },
    )
}

// ---------------------------------------------------------------------------
// 6.

fn linear_fit() -> Outcome {
    let start = Instant::now();
    let skeleton = tree(chain(&["id"], leaf("id", &[0])));
    let mut errors = Vec::new();
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..200).map(|_| rng.random_range(-5.0..5.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v + 2.0).collect();
        let data = Dataset::from_columns(vec![x], y).unwrap();
        let fit = coarse_tune(&skeleton, &data, &FitConfig::default(), &mut rng).unwrap();
        errors.push(fit.nrmse);
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = errors.iter().filter(|&&e| e < 1e-6).count();
    let worst = errors.iter().copied().fold(0.0, f64::max);
    outcome(ok == 10 && secs < 10.0, format!("{ok}/10 seeds below 1e-6, worst NRMSE {worst:.1e}"))
}

// ---------------------------------------------------------------------------
// 7.

fn quantile_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let alphas = [(5u64, 0.05), (10, 0.1), (25, 0.25), (50, 0.5), (1, 0.01)];
    let mut mismatches = 0;
    for b in 0..100 {
        let n = rng.random_range(1..=300usize);
        let ties = b % 2 == 0;
        let rewards: Vec<f64> = (0..n)
            .map(|_| {
                let r: f64 = rng.random_range(0.0..1.0);
                if ties {
                    (r * 20.0).round() / 20.0
                } else {
                    r
                }
            })
            .collect();
        let (pct, alpha) = alphas[b % alphas.len()];
        // Smallest m with m >= alpha n, in integer arithmetic.
        let m = (pct * n as u64).div_ceil(100).max(1) as usize;
        let mut desc = rewards.clone();
        desc.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let threshold = desc[m - 1];
        let passes: Vec<bool> = rewards.iter().map(|&r| r >= threshold).collect();
        let (t, p) = risk_quantile(&rewards, alpha);
        if t.to_bits() != threshold.to_bits() || p != passes {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("100 batches, {mismatches} mismatches"))
}

// ---------------------------------------------------------------------------
// 8.

fn trig_prior() -> PriorModel {
    let b = |op: &str| chain(&[op], leaf("id", &[0]));
    let corpus: Vec<ExpressionTree> = vec![
        join("id", "add", vec![b("sin"), b("cos")]),
        join("id", "add", vec![b("sin"), b("id")]),
        join("id", "add", vec![b("cos"), b("square")]),
        join("id", "mul", vec![b("sin"), b("cos")]),
        join("id", "add", vec![b("sin"), b("exp")]),
        chain(&["sin"], leaf("id", &[0])),
        chain(&["cos"], leaf("id", &[0])),
        join("id", "add", vec![b("cos"), b("id")]),
    ]
    .into_iter()
    .map(tree)
    .collect();
    estimate_conditional(&corpus, &EstimateOptions::default()).unwrap()
}

fn toy_recovery() -> Outcome {
    let start = Instant::now();
    let truth = tree(join(
        "id",
        "add",
        vec![chain(&["sin"], leaf("id", &[0])), chain(&["cos"], leaf("id", &[0]))],
    ));
    let problem = Problem::new("sin-plus-cos", &["x"], truth.clone(), vec![(-3.0, 3.0)]);
    let prior = trig_prior();
    let mut results = Vec::new();
    for seed in 0..10u64 {
        let (train, test) = generate_data(&problem, 0.0, seed).unwrap();
        let config = SearchConfig {
            seed,
            ..Default::default()
        };
        let verdict = match search::run(&config, &train, &prior) {
            Ok(o) => (check_recovery(&o.best.tree, &truth, &test).recovered, o.history.len()),
            Err(_) => (false, 0),
        };
        results.push(verdict);
    }
    let secs = start.elapsed().as_secs_f64();
    let recovered = results.iter().filter(|r| r.0).count();
    outcome(
        recovered >= 8 && secs < 600.0,
        format!(
            "{recovered}/10 seeds recovered; iterations used {:?}",
            results.iter().map(|r| r.1).collect::<Vec<_>>()
        ),
    )
}

// ---------------------------------------------------------------------------
// 9.

/// Desk-scale search budget shared by every run of the variant comparison.
fn desk_config() -> SearchConfig {
    SearchConfig {
        iterations: 20,
        batch_size: 50,
        fine_steps: 200,
        coarse_rows: Some(100),
        ..Default::default()
    }
}

fn supplied_prior() -> PriorModel {
    let b = |op: &str| chain(&[op], leaf("id", &[0]));
    let corpus: Vec<ExpressionTree> = vec![
        join("id", "add", vec![b("exp"), b("id")]),
        join("id", "add", vec![b("exp"), b("sin")]),
        join("id", "add", vec![b("sin"), b("cos")]),
        join("id", "mul", vec![b("exp"), b("id")]),
        chain(&["exp"], leaf("id", &[0])),
        chain(&["id"], leaf("square", &[0])),
        chain(&["sin"], leaf("id", &[0])),
        join("id", "add", vec![b("exp"), chain(&["id"], leaf("square", &[0]))]),
    ]
    .into_iter()
    .map(tree)
    .collect();
    estimate_conditional(&corpus, &EstimateOptions::default()).unwrap()
}

/// Five distinct skeletons drawn from the prior itself, with random
/// constants of magnitude in `[0.5, 1.5]`.
fn synthetic_suite(prior: &PriorModel) -> Vec<Problem> {
    let cfg = ControllerConfig::default();
    let params = ControllerParams::zeros(cfg.hidden, cfg.max_depth);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut suite = Vec::new();
    let mut keys = BTreeSet::new();
    let grid: Vec<f64> = (0..200).map(|i| 0.5 + 1.5 * i as f64 / 199.0).collect();
    while suite.len() < 5 {
        let s = sample(&params, prior, &cfg, 1, &mut rng);
        let key = s.tree.skeleton_key();
        if keys.contains(&key) {
            continue;
        }
        let theta: Vec<f64> = (0..s.tree.parameter_count())
            .map(|_| {
                let m = rng.random_range(0.5..1.5);
                if rng.random_bool(0.5) {
                    m
                } else {
                    -m
                }
            })
            .collect();
        let truth = s.tree.with_parameters(&theta).unwrap();
        let y = symprior::expr::evaluate(&truth, std::slice::from_ref(&grid)).unwrap();
        if y.iter().any(|v| !v.is_finite()) || symprior::optimize::std_dev(&y) < 1e-3 {
            continue;
        }
        keys.insert(key);
        let mut p = Problem::new(&format!("synthetic-{}", suite.len()), &["x"], truth, vec![(0.5, 2.0)]);
        p.n_train = 500;
        suite.push(p);
    }
    suite
}

fn variant_ordering() -> Outcome {
    let start = Instant::now();
    let prior = supplied_prior();
    let suite = synthetic_suite(&prior);
    let noise = [0.0, 0.05, 0.1];
    let opts = BenchOptions {
        variants: Variant::ALL.to_vec(),
        seeds: 10,
        noise_levels: noise.to_vec(),
        search: desk_config(),
        full: false,
        execution: Default::default(),
    };
    let records = bench::run_benchmark(&suite, Some(&prior), &opts).unwrap();
    let means = bench::mean_rates(&records);
    let mean = |v: Variant, n: f64| {
        means
            .iter()
            .find(|m| m.0 == v && m.1 == n)
            .map_or(f64::NAN, |m| m.2)
    };
    let overall = |v: Variant| noise.iter().map(|&n| mean(v, n)).sum::<f64>() / noise.len() as f64;
    let mut ok = true;
    let mut parts = Vec::new();
    for &n in &noise {
        let row: Vec<f64> = Variant::ALL.iter().map(|&v| mean(v, n)).collect();
        ok &= mean(Variant::TreeRnnPrior, n) >= mean(Variant::TreeRnn, n);
        ok &= mean(Variant::RnnPrior, n) >= mean(Variant::Rnn, n);
        parts.push(format!(
            "noise {n}: {}",
            Variant::ALL
                .iter()
                .zip(&row)
                .map(|(v, r)| format!("{} {r:.2}", v.name()))
                .collect::<Vec<_>>()
                .join(", ")
        ));
    }
    let best = overall(Variant::TreeRnnPrior);
    ok &= Variant::ALL.iter().all(|&v| best >= overall(v));
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 7200.0;
    outcome(ok, format!("{} runs; {}", records.len(), parts.join("; ")))
}

// ---------------------------------------------------------------------------
// 10.

fn kl_pull() -> Outcome {
    let prior = trig_prior();
    let controller = ControllerConfig {
        prior_logit_bias: false,
        ..Default::default()
    };
    let mut trainer = PolicyTrainer::new(controller, 0.01, 0.05, PolicyOptimizer::Adam, 10);
    let mut first = f64::NAN;
    let mut last = f64::NAN;
    for update in 0..500 {
        let batch = trainer.sample_batch(&prior, update, 50, 1);
        let stats = trainer.update(&batch, &vec![0.5; batch.len()], 0.5).unwrap();
        if update == 0 {
            first = stats.kl_avg;
        }
        last = stats.kl_avg;
        if stats.kl_avg < 1e-3 {
            return outcome(
                true,
                format!("batch KL {first:.3e} -> {:.3e} after {} updates", stats.kl_avg, update + 1),
            );
        }
    }
    outcome(false, format!("batch KL {first:.3e} -> {last:.3e} after 500 updates"))
}

// ---------------------------------------------------------------------------
// 11.

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_symprior"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&out.stderr).into_owned())
    }
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_default()
}

fn cli_reproducibility() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    let corpus: String = oracle_corpus().iter().map(|v| format!("{v}\n")).collect();
    std::fs::write(d.join("corpus.jsonl"), corpus).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut csv = String::from("x,y\n");
    for _ in 0..300 {
        let x: f64 = rng.random_range(-2.0..2.0);
        csv += &format!("{x},{}\n", 1.5 * x.sin() + 0.5 * x * x);
    }
    std::fs::write(d.join("data.csv"), csv).unwrap();
    std::fs::write(
        d.join("config.json"),
        json!({"iterations": 3, "batch_size": 20, "fine_steps": 50}).to_string(),
    )
    .unwrap();
    let suite = json!([{
        "name": "sine",
        "tree": {"op": "sin", "alpha": 1.3, "children": [{"leaf": "id", "vars": [0]}]},
        "ranges": [[-2.0, 2.0]],
        "n_train": 200,
        "n_test": 100
    }]);
    std::fs::write(d.join("suite.json"), suite.to_string()).unwrap();
    let prior = s(&d.join("prior.json"));
    let mut steps = vec![run_cli(&[
        "priors",
        "--corpus",
        &s(&d.join("corpus.jsonl")),
        "--out",
        &prior,
    ])];
    for run in ["fit-a", "fit-b"] {
        steps.push(run_cli(&[
            "fit",
            "--data",
            &s(&d.join("data.csv")),
            "--priors",
            &prior,
            "--config",
            &s(&d.join("config.json")),
            "--seed",
            "5",
            "--out",
            &s(&d.join(run)),
        ]));
    }
    for run in ["bench-a", "bench-b"] {
        steps.push(run_cli(&[
            "benchmark",
            "--suite",
            &s(&d.join("suite.json")),
            "--seeds",
            "2",
            "--noise",
            "0,0.1",
            "--priors",
            &prior,
            "--config",
            &s(&d.join("config.json")),
            "--out",
            &s(&d.join(run)),
        ]));
    }
    if let Some(Err(e)) = steps.iter().find(|r| r.is_err()) {
        return outcome(false, format!("command failed: {}", e.trim()));
    }
    let pairs = [
        ("fit-a/report.json", "fit-b/report.json"),
        ("fit-a/best.json", "fit-b/best.json"),
        ("bench-a/recovery.csv", "bench-b/recovery.csv"),
    ];
    let mut differ = Vec::new();
    for (a, b) in pairs {
        let (x, y) = (read(&d.join(a)), read(&d.join(b)));
        if x.is_empty() || x != y {
            differ.push(a);
        }
    }
    outcome(
        differ.is_empty(),
        if differ.is_empty() {
            "report.json, best.json and recovery.csv byte-identical across reruns".to_string()
        } else {
            format!("differing outputs: {differ:?}")
        },
    )
}
