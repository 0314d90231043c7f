//! `symprior` command-line interface.

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use std::fs;
use std::path::{Path, PathBuf};
use symprior::bench::{self, BenchOptions, Variant, DEFAULT_SEEDS, FULL_SEEDS};
use symprior::priors::{estimate_conditional, read_corpus_path, EstimateOptions, PriorModel, DEFAULT_EPSILON};
use symprior::search::{self, PolicyTrainer, SearchConfig};
use symprior::Dataset;

#[derive(Parser)]
#[command(name = "symprior", version, about = "Prior-guided symbolic regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate a prior model from a corpus with one tree per line.
    Priors {
        #[arg(long)]
        corpus: PathBuf,
        /// Output path for the prior model.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_EPSILON)]
        epsilon: f64,
        /// Deepest level with its own context tables.
        #[arg(long, default_value_t = 8)]
        max_level: usize,
    },
    /// Search for an expression fitting a CSV whose last column is the target.
    Fit {
        #[arg(long)]
        data: PathBuf,
        /// Prior model; a uniform prior is used when omitted.
        #[arg(long)]
        priors: Option<PathBuf>,
        /// Search settings; missing keys take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Run every job on the calling thread.
        #[arg(long)]
        sequential: bool,
    },
    /// Run multi-seed recovery experiments over a problem suite.
    Benchmark {
        /// Array of problems or built-in names, or an object with `problems`.
        #[arg(long)]
        suite: PathBuf,
        /// Comma-separated variants.
        #[arg(long, value_delimiter = ',', default_value = "tree-rnn+prior,tree-rnn,rnn+prior,rnn")]
        variants: Vec<String>,
        /// Seeds per cell; defaults to 10, or 100 with --full.
        #[arg(long)]
        seeds: Option<usize>,
        /// Comma-separated noise levels.
        #[arg(long, value_delimiter = ',', default_value = "0,0.01,0.05,0.07,0.1")]
        noise: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Prior model for the +prior variants.
        #[arg(long)]
        priors: Option<PathBuf>,
        /// Search settings shared by every run.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Large setting: 10,000 training points and 100 seeds.
        #[arg(long)]
        full: bool,
        /// Fill the wall_seconds column. Output is then not reproducible.
        #[arg(long)]
        record_time: bool,
        #[arg(long)]
        sequential: bool,
    },
}

fn read_json(path: &Path) -> Result<serde_json::Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_config(path: Option<&Path>) -> Result<SearchConfig> {
    let Some(path) = path else {
        return Ok(SearchConfig::default());
    };
    let config: SearchConfig =
        serde_json::from_value(read_json(path)?).with_context(|| format!("invalid config {}", path.display()))?;
    config.validate()?;
    Ok(config)
}

fn read_prior(path: &Path) -> Result<PriorModel> {
    PriorModel::from_path(path).with_context(|| format!("loading prior {}", path.display()))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn priors(corpus: &Path, out: &Path, epsilon: f64, max_level: usize) -> Result<()> {
    let trees = read_corpus_path(corpus).with_context(|| format!("reading corpus {}", corpus.display()))?;
    let opts = EstimateOptions {
        epsilon,
        max_level,
        ..Default::default()
    };
    let model = estimate_conditional(&trees, &opts)?;
    let mut text = model.to_json_string();
    text.push('\n');
    fs::write(out, text).with_context(|| format!("writing {}", out.display()))?;
    log::info!("prior from {} expressions written to {}", trees.len(), out.display());
    Ok(())
}

fn fit(
    data: &Path,
    prior: Option<&Path>,
    config: Option<&Path>,
    seed: Option<u64>,
    out: &Path,
    sequential: bool,
) -> Result<()> {
    let dataset = Dataset::from_csv_path(data).with_context(|| format!("reading {}", data.display()))?;
    let mut config = read_config(config)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if sequential {
        config.execution = symprior::par::Execution::Sequential;
    }
    let prior = match prior {
        Some(p) => read_prior(p)?,
        None => PriorModel::uniform(config.max_depth),
    };
    let mut trainer = PolicyTrainer::new(
        config.controller(),
        config.learning_rate,
        config.risk_alpha,
        config.policy_optimizer,
        config.seed,
    );
    let outcome = search::run_with(&config, &dataset, &prior, &mut trainer).context("search failed")?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join("report.json"), &outcome.report(&config))?;
    write_json(&out.join("best.json"), &outcome.best.to_json())?;
    write_json(
        &out.join("controller.json"),
        &trainer.params.to_checkpoint(config.topology),
    )?;
    println!("{}", outcome.best.tree);
    println!("training NRMSE {:e}", outcome.best.nrmse);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn benchmark(
    suite: &Path,
    variants: &[String],
    seeds: Option<usize>,
    noise: &[f64],
    out: &Path,
    prior: Option<&Path>,
    config: Option<&Path>,
    full: bool,
    record_time: bool,
    sequential: bool,
) -> Result<()> {
    let problems = bench::read_suite(&read_json(suite)?)?;
    let variants = variants
        .iter()
        .map(|v| Variant::from_name(v))
        .collect::<Result<Vec<_>, _>>()?;
    if variants.is_empty() {
        bail!("no variants given");
    }
    let prior = prior.map(read_prior).transpose()?;
    let opts = BenchOptions {
        variants,
        seeds: seeds.unwrap_or(if full { FULL_SEEDS } else { DEFAULT_SEEDS }),
        noise_levels: noise.to_vec(),
        search: read_config(config)?,
        full,
        execution: if sequential {
            symprior::par::Execution::Sequential
        } else {
            symprior::par::Execution::Parallel
        },
    };
    let records = bench::run_benchmark(&problems, prior.as_ref(), &opts)?;
    bench::write_outputs(&records, out, record_time)?;
    for (variant, noise, mean, sd, n) in bench::mean_rates(&records) {
        println!("{:<15} noise {:<5} mean recovery {:.3} (sd {:.3}, {} problems)", variant.name(), noise, mean, sd, n);
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SYMPRIOR_LOG", "warn")).init();
    match Cli::parse().command {
        Command::Priors {
            corpus,
            out,
            epsilon,
            max_level,
        } => priors(&corpus, &out, epsilon, max_level),
        Command::Fit {
            data,
            priors,
            config,
            seed,
            out,
            sequential,
        } => fit(&data, priors.as_deref(), config.as_deref(), seed, &out, sequential),
        Command::Benchmark {
            suite,
            variants,
            seeds,
            noise,
            out,
            priors,
            config,
            full,
            record_time,
            sequential,
        } => benchmark(
            &suite,
            &variants,
            seeds,
            &noise,
            &out,
            priors.as_deref(),
            config.as_deref(),
            full,
            record_time,
            sequential,
        ),
    }
}
