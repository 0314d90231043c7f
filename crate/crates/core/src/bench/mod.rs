//! Benchmark harness: data generation, recovery checks and multi-seed
//! runs across controller variants.

mod problems;

pub use problems::{
    biology, builtin, chemistry, engineering, hamiltonian, Problem, BIOLOGY_CONSTANTS, BUILTIN_NAMES,
    CHEMISTRY_CONSTANTS, DEFAULT_N_TEST, DEFAULT_N_TRAIN, ENGINEERING_CONSTANTS, HAMILTONIAN_CONSTANTS,
};

use crate::controller::Topology;
use crate::data::Dataset;
use crate::error::BenchError;
use crate::expr::{evaluate, ExpressionTree};
use crate::optimize::{nrmse, std_dev};
use crate::par::{self, Execution};
use crate::priors::PriorModel;
use crate::search::{self, SearchConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::Value;
use std::collections::BTreeMap;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

/// Noise levels as fractions of the clean signal's standard deviation.
pub const NOISE_LEVELS: [f64; 5] = [0.0, 0.01, 0.05, 0.07, 0.1];
pub const DEFAULT_SEEDS: usize = 10;
pub const FULL_SEEDS: usize = 100;
pub const FULL_N_TRAIN: usize = 10_000;
/// Redraws allowed per row before a problem is declared non-finite.
pub const MAX_RESAMPLES: usize = 100;
/// Residual variance ratio below which a candidate counts as recovered.
pub const RESIDUAL_TOLERANCE: f64 = 1e-8;
/// Relative tolerance on constants for a structural match.
pub const CONSTANT_TOLERANCE: f64 = 1e-4;

/// Controller variants: tree-structured or sequential state flow, with the
/// supplied prior or a uniform one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Variant {
    TreeRnn,
    TreeRnnPrior,
    Rnn,
    RnnPrior,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::TreeRnnPrior, Variant::TreeRnn, Variant::RnnPrior, Variant::Rnn];

    pub fn name(self) -> &'static str {
        match self {
            Variant::TreeRnn => "tree-rnn",
            Variant::TreeRnnPrior => "tree-rnn+prior",
            Variant::Rnn => "rnn",
            Variant::RnnPrior => "rnn+prior",
        }
    }

    pub fn from_name(s: &str) -> Result<Variant, BenchError> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s.trim())
            .ok_or_else(|| BenchError::UnknownVariant(s.to_string()))
    }

    pub fn topology(self) -> Topology {
        match self {
            Variant::TreeRnn | Variant::TreeRnnPrior => Topology::Tree,
            Variant::Rnn | Variant::RnnPrior => Topology::Chain,
        }
    }

    pub fn uses_prior(self) -> bool {
        matches!(self, Variant::TreeRnnPrior | Variant::RnnPrior)
    }
}

fn fnv1a(text: &str) -> u64 {
    text.bytes()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Draws rows uniformly from the ranges, redrawing rows where the truth is
/// non-finite.
fn draw_rows(problem: &Problem, n: usize, rng: &mut ChaCha8Rng) -> Result<(Vec<Vec<f64>>, Vec<f64>), BenchError> {
    let d = problem.ranges.len();
    let mut x = vec![Vec::with_capacity(n); d];
    let mut y = Vec::with_capacity(n);
    let mut row = vec![0.0; d];
    for _ in 0..n {
        let mut tries = 0;
        let value = loop {
            for (r, &(lo, hi)) in row.iter_mut().zip(&problem.ranges) {
                *r = if lo == hi { lo } else { rng.random_range(lo..=hi) };
            }
            let columns: Vec<Vec<f64>> = row.iter().map(|&v| vec![v]).collect();
            let v = evaluate(&problem.tree, &columns)?[0];
            if v.is_finite() {
                break v;
            }
            tries += 1;
            if tries >= MAX_RESAMPLES {
                return Err(BenchError::NonFinite {
                    name: problem.name.clone(),
                    failures: tries,
                });
            }
        };
        for (col, &v) in x.iter_mut().zip(&row) {
            col.push(v);
        }
        y.push(value);
    }
    Ok((x, y))
}

/// Training and held-out sets. Inputs depend only on the problem and seed;
/// training targets get Gaussian noise with standard deviation
/// `noise * std(f)`; held-out targets stay clean.
pub fn generate_data(problem: &Problem, noise: f64, seed: u64) -> Result<(Dataset, Dataset), BenchError> {
    problem.validate()?;
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(BenchError::Problem {
            name: problem.name.clone(),
            message: format!("noise level {noise} must be finite and non-negative"),
        });
    }
    let stream = fnv1a(&problem.name);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let (x_train, clean) = draw_rows(problem, problem.n_train, &mut rng)?;
    let (x_test, y_test) = draw_rows(problem, problem.n_test, &mut rng)?;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed);
    noise_rng.set_stream(stream ^ 0x9e37_79b9_7f4a_7c15);
    let sigma = noise * std_dev(&clean);
    let y_train = if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("sigma is finite and positive");
        clean.iter().map(|&v| v + normal.sample(&mut noise_rng)).collect()
    } else {
        clean
    };
    let train = Dataset::new(problem.variables.clone(), x_train, y_train)?;
    let test = Dataset::new(problem.variables.clone(), x_test, y_test)?;
    Ok((train, test))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RecoveryVerdict {
    pub recovered: bool,
    /// `var(candidate - truth) / var(truth)` over the held-out inputs.
    pub residual_ratio: f64,
    /// Same canonical skeleton with constants within tolerance.
    pub structural_match: bool,
}

fn variance(v: &[f64]) -> f64 {
    let s = std_dev(v);
    s * s
}

fn constants_close(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| (x - y).abs() <= CONSTANT_TOLERANCE * x.abs().max(y.abs()))
}

/// Compares a candidate with the truth on held-out inputs. A constant
/// offset still counts as recovered.
pub fn check_recovery(candidate: &ExpressionTree, truth: &ExpressionTree, held_out: &Dataset) -> RecoveryVerdict {
    let (c, t) = (candidate.canonical(), truth.canonical());
    let structural_match = c.skeleton_key() == t.skeleton_key() && constants_close(&c.parameters(), &t.parameters());
    let truth_values = evaluate(truth, &held_out.x).unwrap_or_default();
    let residual_ratio = match evaluate(candidate, &held_out.x) {
        Ok(values) if values.len() == truth_values.len() && values.iter().all(|v| v.is_finite()) => {
            let diff: Vec<f64> = values.iter().zip(&truth_values).map(|(a, b)| a - b).collect();
            let scale = variance(&truth_values);
            let resid = variance(&diff);
            if scale > 0.0 {
                resid / scale
            } else if resid == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        }
        _ => f64::INFINITY,
    };
    RecoveryVerdict {
        recovered: residual_ratio < RESIDUAL_TOLERANCE || structural_match,
        residual_ratio,
        structural_match,
    }
}

/// One `(problem, variant, noise, seed)` outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub problem: String,
    pub variant: Variant,
    pub noise: f64,
    pub seed: u64,
    pub recovered: bool,
    pub nrmse_test: f64,
    pub wall_seconds: f64,
    /// Set when the run failed or panicked.
    pub error: Option<String>,
    pub expression: Option<String>,
}

#[derive(Clone, Debug)]
pub struct BenchOptions {
    pub variants: Vec<Variant>,
    pub seeds: usize,
    pub noise_levels: Vec<f64>,
    pub search: SearchConfig,
    /// Replace every problem's training size with the large setting.
    pub full: bool,
    pub execution: Execution,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            variants: Variant::ALL.to_vec(),
            seeds: DEFAULT_SEEDS,
            noise_levels: NOISE_LEVELS.to_vec(),
            search: SearchConfig::default(),
            full: false,
            execution: Execution::default(),
        }
    }
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".to_string())
}

fn run_one(
    problem: &Problem,
    variant: Variant,
    noise: f64,
    seed: u64,
    prior: &PriorModel,
    base: &SearchConfig,
) -> Result<(bool, f64, String), BenchError> {
    let (train, test) = generate_data(problem, noise, seed)?;
    let config = SearchConfig {
        seed,
        topology: variant.topology(),
        ..base.clone()
    };
    let outcome = search::run(&config, &train, prior)?;
    let verdict = check_recovery(&outcome.best.tree, &problem.tree, &test);
    let predictions = evaluate(&outcome.best.tree, &test.x)?;
    let score = nrmse(&predictions, &test.y)?;
    Ok((verdict.recovered, score, outcome.best.tree.to_string()))
}

/// Runs every `(problem, variant, noise, seed)` combination. Failed or
/// panicking runs are logged and scored as not recovered. Records come
/// back in a fixed order whatever the execution mode.
pub fn run_benchmark(
    suite: &[Problem],
    prior: Option<&PriorModel>,
    opts: &BenchOptions,
) -> Result<Vec<RunRecord>, BenchError> {
    if suite.is_empty() {
        return Err(BenchError::EmptySuite);
    }
    let mut problems = suite.to_vec();
    for p in &mut problems {
        if opts.full {
            p.n_train = FULL_N_TRAIN;
        }
        p.validate()?;
        // Surface unusable ground truths before fanning out.
        generate_data(p, 0.0, 0)?;
    }
    let uniform = PriorModel::uniform(opts.search.max_depth);
    for v in &opts.variants {
        if v.uses_prior() && prior.is_none() {
            return Err(BenchError::MissingPrior(v.name().to_string()));
        }
    }
    let mut jobs = Vec::new();
    for p in &problems {
        for &v in &opts.variants {
            for &noise in &opts.noise_levels {
                for seed in 0..opts.seeds as u64 {
                    jobs.push((p, v, noise, seed));
                }
            }
        }
    }
    let inner = SearchConfig {
        execution: Execution::Sequential,
        ..opts.search.clone()
    };
    let records = par::map(opts.execution, &jobs, |&(p, v, noise, seed)| {
        let model = if v.uses_prior() { prior.expect("checked above") } else { &uniform };
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| run_one(p, v, noise, seed, model, &inner)));
        let wall_seconds = start.elapsed().as_secs_f64();
        let mut record = RunRecord {
            problem: p.name.clone(),
            variant: v,
            noise,
            seed,
            recovered: false,
            nrmse_test: f64::INFINITY,
            wall_seconds,
            error: None,
            expression: None,
        };
        match result {
            Ok(Ok((recovered, score, expr))) => {
                record.recovered = recovered;
                record.nrmse_test = score;
                record.expression = Some(expr);
            }
            Ok(Err(e)) => {
                log::warn!("{} / {} / noise {noise} / seed {seed} failed: {e}", p.name, v.name());
                record.error = Some(e.to_string());
            }
            Err(panic) => {
                let msg = panic_message(panic);
                log::error!("{} / {} / noise {noise} / seed {seed} panicked: {msg}", p.name, v.name());
                record.error = Some(format!("panic: {msg}"));
            }
        }
        log::info!(
            "{} / {} / noise {noise} / seed {seed}: recovered {} (test NRMSE {:.3e})",
            p.name,
            v.name(),
            record.recovered,
            record.nrmse_test
        );
        record
    });
    Ok(records)
}

/// Recovery rate for one `(problem, variant, noise)` cell.
#[derive(Clone, Debug, PartialEq)]
pub struct RateRow {
    pub problem: String,
    pub variant: Variant,
    pub noise: f64,
    pub runs: usize,
    pub recovered: usize,
}

impl RateRow {
    pub fn rate(&self) -> f64 {
        if self.runs == 0 {
            0.0
        } else {
            self.recovered as f64 / self.runs as f64
        }
    }
}

/// Noise levels keyed by their bit pattern so they sort and compare exactly.
fn noise_key(noise: f64) -> u64 {
    noise.to_bits()
}

/// Per-cell recovery rates in first-appearance order of problems, then
/// variant order, then noise order.
pub fn recovery_rates(records: &[RunRecord]) -> Vec<RateRow> {
    let mut rows: Vec<RateRow> = Vec::new();
    let mut index: BTreeMap<(String, Variant, u64), usize> = BTreeMap::new();
    for r in records {
        let key = (r.problem.clone(), r.variant, noise_key(r.noise));
        let i = *index.entry(key).or_insert_with(|| {
            rows.push(RateRow {
                problem: r.problem.clone(),
                variant: r.variant,
                noise: r.noise,
                runs: 0,
                recovered: 0,
            });
            rows.len() - 1
        });
        rows[i].runs += 1;
        rows[i].recovered += r.recovered as usize;
    }
    rows
}

/// Mean and sample standard deviation of per-problem rates for each
/// `(variant, noise)`, in first-appearance order.
pub fn mean_rates(records: &[RunRecord]) -> Vec<(Variant, f64, f64, f64, usize)> {
    let mut order: Vec<(Variant, u64)> = Vec::new();
    let mut groups: BTreeMap<(Variant, u64), Vec<f64>> = BTreeMap::new();
    for row in recovery_rates(records) {
        let key = (row.variant, noise_key(row.noise));
        if !groups.contains_key(&key) {
            order.push(key);
        }
        groups.entry(key).or_default().push(row.rate());
    }
    order
        .into_iter()
        .map(|key| {
            let rates = &groups[&key];
            let n = rates.len();
            let mean = rates.iter().sum::<f64>() / n as f64;
            let sd = if n > 1 {
                (rates.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            (key.0, f64::from_bits(key.1), mean, sd, n)
        })
        .collect()
}

/// Writes `recovery.csv`, `rates_by_problem.csv` and `rates_by_noise.csv`.
/// `wall_seconds` is left empty unless `record_time` is set, which keeps
/// repeated runs byte-identical.
pub fn write_outputs(records: &[RunRecord], dir: &Path, record_time: bool) -> Result<(), BenchError> {
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join("recovery.csv"))?;
    w.write_record(["problem", "variant", "noise", "seed", "recovered", "nrmse_test", "wall_seconds"])?;
    for r in records {
        let wall = if record_time { format!("{:.3}", r.wall_seconds) } else { String::new() };
        w.write_record([
            r.problem.clone(),
            r.variant.name().to_string(),
            r.noise.to_string(),
            r.seed.to_string(),
            r.recovered.to_string(),
            r.nrmse_test.to_string(),
            wall,
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("rates_by_problem.csv"))?;
    w.write_record(["problem", "variant", "noise", "runs", "recovered", "rate"])?;
    for row in recovery_rates(records) {
        w.write_record([
            row.problem.clone(),
            row.variant.name().to_string(),
            row.noise.to_string(),
            row.runs.to_string(),
            row.recovered.to_string(),
            row.rate().to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("rates_by_noise.csv"))?;
    w.write_record(["variant", "noise", "problems", "mean_rate", "std_rate"])?;
    for (variant, noise, mean, sd, n) in mean_rates(records) {
        w.write_record([
            variant.name().to_string(),
            noise.to_string(),
            n.to_string(),
            mean.to_string(),
            sd.to_string(),
        ])?;
    }
    w.flush()?;

    let failures: Vec<&RunRecord> = records.iter().filter(|r| r.error.is_some()).collect();
    if !failures.is_empty() {
        let mut f = std::fs::File::create(dir.join("failures.txt"))?;
        for r in failures {
            writeln!(
                f,
                "{} {} {} {}: {}",
                r.problem,
                r.variant.name(),
                r.noise,
                r.seed,
                r.error.as_deref().unwrap_or("")
            )?;
        }
    }
    Ok(())
}

/// A suite file is either an array of problems or an object with a
/// `problems` array. Each problem is a problem object or the name of a
/// built-in problem.
pub fn read_suite(v: &Value) -> Result<Vec<Problem>, BenchError> {
    let items = match v {
        Value::Array(a) => a,
        Value::Object(o) => o
            .get("problems")
            .and_then(Value::as_array)
            .ok_or_else(|| BenchError::Problem {
                name: "suite".into(),
                message: "expected a `problems` array".into(),
            })?,
        _ => {
            return Err(BenchError::Problem {
                name: "suite".into(),
                message: "expected an array or an object".into(),
            })
        }
    };
    items
        .iter()
        .map(|item| match item {
            Value::String(name) => builtin(name).ok_or_else(|| BenchError::Problem {
                name: name.clone(),
                message: format!("not a built-in problem; expected one of {BUILTIN_NAMES:?}"),
            }),
            other => Problem::from_json(other),
        })
        .collect()
}
