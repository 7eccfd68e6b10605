//! Repeated-trial experiments and evaluation-only oracles.
//!
//! Everything labelled *oracle* here reads the raw data and is NOT
//! private. It exists to score mechanisms and to check them in tests.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::budget::{BudgetFunction, BudgetKind};
use crate::count::{prdp_count_run, stable_sum};
use crate::data::{generate, load_csv, GeneratorSpec, ValueDistribution};
use crate::error::{invalid, PrdpError, Result};
use crate::framework::{naive_baseline, prdp_framework_run};
use crate::mechanisms::standard_mechanism;
use crate::noise::{subseed, NoiseSource, StreamFamily};
use crate::prldp::{prldp_count, prldp_framework_run, standard_ldp_mechanism};
use crate::query::{distinct_key, Query};
use crate::record::Dataset;
use crate::sum_ext::{prdp_sum_extension_run, sum_extension_bound};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Fraction trimmed from each end before averaging.
pub const TRIM_FRACTION: f64 = 0.2;

/// Environment variable capping the number of concurrent trials.
pub const WORKERS_ENV: &str = "PRDP_WORKERS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    PrdpCount,
    PrdpExt,
    PrdpFramework,
    PrldpCount,
    PrldpFramework,
    Naive,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::PrdpCount,
        Method::PrdpExt,
        Method::PrdpFramework,
        Method::PrldpCount,
        Method::PrldpFramework,
        Method::Naive,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::PrdpCount => "prdp-count",
            Method::PrdpExt => "prdp-ext",
            Method::PrdpFramework => "prdp-framework",
            Method::PrldpCount => "prldp-count",
            Method::PrldpFramework => "prldp-framework",
            Method::Naive => "naive",
        }
    }

    pub fn supports(&self, query: Query) -> bool {
        match self {
            Method::PrdpCount | Method::PrldpCount => query == Query::Count,
            Method::PrdpExt => query == Query::Sum,
            Method::PrldpFramework => matches!(query, Query::Count | Query::Sum),
            Method::PrdpFramework | Method::Naive => true,
        }
    }

    /// `Ok` if `query` can be answered, else [`PrdpError::Unsupported`].
    pub fn check(&self, query: Query) -> Result<()> {
        if self.supports(query) {
            Ok(())
        } else {
            Err(PrdpError::Unsupported {
                method: self.as_str().into(),
                query: query.to_string(),
            })
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = PrdpError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| invalid(format!("unknown method `{s}`")))
    }
}

/// `key=value` pairs after a `name:` prefix.
fn spec_fields(spec: &str) -> Result<(&str, Vec<(&str, f64)>)> {
    let (name, rest) = spec
        .split_once(':')
        .ok_or_else(|| invalid(format!("expected `name:key=value,...`, got `{spec}`")))?;
    let fields = rest
        .split(',')
        .filter(|kv| !kv.trim().is_empty())
        .map(|kv| {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| invalid(format!("expected key=value in `{spec}`, got `{kv}`")))?;
            let x: f64 = v
                .trim()
                .parse()
                .map_err(|_| invalid(format!("`{v}` is not a number in `{spec}`")))?;
            Ok((k.trim(), x))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((name.trim(), fields))
}

fn field(fields: &[(&str, f64)], key: &str, default: Option<f64>, spec: &str) -> Result<f64> {
    fields
        .iter()
        .find(|(k, _)| *k == key)
        .map(|&(_, v)| v)
        .or(default)
        .ok_or_else(|| invalid(format!("missing `{key}` in `{spec}`")))
}

fn reject_unknown(fields: &[(&str, f64)], known: &[&str], spec: &str) -> Result<()> {
    match fields.iter().find(|(k, _)| !known.contains(k)) {
        Some((k, _)) => Err(invalid(format!("unknown field `{k}` in `{spec}`"))),
        None => Ok(()),
    }
}

/// Parse `inverse:alpha=A`, `log:c=C[,power=P]` (power defaults to 4) or
/// `sqrt:c=C`.
pub fn parse_budget_spec(spec: &str) -> Result<BudgetKind> {
    let (name, f) = spec_fields(spec)?;
    match name {
        "inverse" => {
            reject_unknown(&f, &["alpha"], spec)?;
            Ok(BudgetKind::Inverse { alpha: field(&f, "alpha", None, spec)? })
        }
        "log" => {
            reject_unknown(&f, &["c", "power"], spec)?;
            Ok(BudgetKind::Log {
                c: field(&f, "c", None, spec)?,
                power: field(&f, "power", Some(4.0), spec)?,
            })
        }
        "sqrt" => {
            reject_unknown(&f, &["c"], spec)?;
            Ok(BudgetKind::Sqrt { c: field(&f, "c", None, spec)? })
        }
        other => Err(invalid(format!("unknown budget function `{other}`"))),
    }
}

fn as_count(x: f64, what: &str) -> Result<usize> {
    if x >= 0.0 && x.fract() == 0.0 && x <= usize::MAX as f64 {
        Ok(x as usize)
    } else {
        Err(invalid(format!("{what} must be a non-negative integer, got {x}")))
    }
}

/// Parse `normal:mu=M,sigma=S,n=N` or `zipf:a=A,b=B,n=N` into a
/// distribution and a record count.
pub fn parse_generator_spec(spec: &str) -> Result<(ValueDistribution, usize)> {
    let (name, f) = spec_fields(spec)?;
    let dist = match name {
        "normal" => {
            reject_unknown(&f, &["mu", "sigma", "n"], spec)?;
            ValueDistribution::Normal {
                mu: field(&f, "mu", None, spec)?,
                sigma: field(&f, "sigma", None, spec)?,
            }
        }
        "zipf" => {
            reject_unknown(&f, &["a", "b", "n"], spec)?;
            ValueDistribution::Zipf {
                a: field(&f, "a", None, spec)?,
                b: field(&f, "b", None, spec)?,
            }
        }
        other => return Err(invalid(format!("unknown generator `{other}`"))),
    };
    Ok((dist, as_count(field(&f, "n", None, spec)?, "n")?))
}

/// Where the records come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    Generated { distribution: ValueDistribution, n: usize },
    Csv { path: PathBuf, value_column: String, key_column: Option<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub source: DataSource,
    pub budget: BudgetKind,
    /// Upper bound `U` on the primary value.
    pub bound: u64,
    pub eps_max: f64,
    pub query: Query,
    pub method: Method,
    pub beta: f64,
    pub trials: usize,
    pub seed: u64,
    /// Replace all noise with zeros. NOT private.
    pub zero_noise: bool,
}

impl ExperimentConfig {
    /// Defaults: `U = 1e12`, `eps_max = 100`, `beta = 0.1`, 50 trials.
    pub fn new(source: DataSource, budget: BudgetKind, query: Query, method: Method) -> Self {
        ExperimentConfig {
            source,
            budget,
            bound: 1_000_000_000_000,
            eps_max: 100.0,
            query,
            method,
            beta: 0.1,
            trials: 50,
            seed: 0,
            zero_noise: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials < 1 {
            return Err(invalid("trials must be at least 1"));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(invalid(format!("beta must be in (0, 1), got {}", self.beta)));
        }
        if self.bound < 1 {
            return Err(invalid("value bound must be at least 1"));
        }
        if let DataSource::Csv { key_column: None, .. } = self.source {
            if self.query == Query::Distinct {
                return Err(invalid("distinct over a CSV needs a key column"));
            }
        }
        Ok(())
    }
}

/// One trial's outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub estimate: f64,
    pub abs_error: f64,
    /// Relative error for count/sum/distinct; relative rank error for max.
    pub relative_error: f64,
    pub runtime_secs: f64,
    pub eps_tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub n: usize,
    /// Rows dropped while loading a CSV source.
    pub dropped_rows: Option<usize>,
    pub true_answer: f64,
    /// Exact minimum budget in the dataset. Oracle: NOT private.
    pub eps_min_oracle: Option<f64>,
    pub eps_min: f64,
    pub domain_count: usize,
    pub trimmed_mean_relative_error: f64,
    pub trimmed_mean_runtime_secs: f64,
    pub trials: Vec<TrialResult>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per trial, for plotting.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "query", "method", "trial", "estimate", "abs_error", "relative_error", "runtime_secs", "eps_tau",
        ])?;
        for t in &self.trials {
            w.write_record([
                self.config.query.to_string(),
                self.config.method.to_string(),
                t.trial.to_string(),
                t.estimate.to_string(),
                t.abs_error.to_string(),
                t.relative_error.to_string(),
                t.runtime_secs.to_string(),
                t.eps_tau.map_or(String::new(), |e| e.to_string()),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Mean after dropping `floor(0.2 n)` values from each end.
pub fn trimmed_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = (TRIM_FRACTION * v.len() as f64).floor() as usize;
    let mid = &v[k..v.len() - k];
    stable_sum(mid) / mid.len() as f64
}

/// Smallest budget among the dataset's records. Oracle: NOT private.
pub fn eps_min_oracle(dataset: &Dataset, budget: &BudgetFunction) -> Result<f64> {
    if dataset.is_empty() {
        return Err(invalid("eps_min of an empty dataset is undefined"));
    }
    dataset
        .records()
        .iter()
        .map(|r| budget.evaluate(r))
        .try_fold(f64::INFINITY, |m, e| Ok(m.min(e?)))
}

/// Largest change in `query` from deleting up to `rho` records, by closed
/// form. Oracle: NOT private.
pub fn downward_diff_oracle(dataset: &Dataset, query: Query, rho: usize) -> Result<f64> {
    if rho < 1 {
        return Err(invalid("rho must be at least 1"));
    }
    let n = dataset.len();
    let mut values: Vec<u64> = dataset.values().collect();
    values.sort_unstable_by(|a, b| b.cmp(a));
    let k = rho.min(n);
    Ok(match query {
        Query::Count => k as f64,
        Query::Sum => values[..k].iter().map(|&v| v as u128).sum::<u128>() as f64,
        Query::Max => {
            let top = values.first().copied().unwrap_or(0);
            let rest = values.get(k).copied().unwrap_or(0);
            (top - rest) as f64
        }
        Query::Distinct => {
            let mut counts: std::collections::HashMap<u64, usize> = Default::default();
            for r in dataset.records() {
                *counts.entry(distinct_key(r)).or_default() += 1;
            }
            let mut sizes: Vec<usize> = counts.into_values().collect();
            sizes.sort_unstable();
            let mut left = rho;
            sizes
                .into_iter()
                .take_while(|&s| {
                    let fits = s <= left;
                    left = left.saturating_sub(s);
                    fits
                })
                .count() as f64
        }
    })
}

/// [`downward_diff_oracle`] by enumerating every deletion of at most `rho`
/// records. Exponential; `n <= 20` only.
pub fn downward_diff_exhaustive(dataset: &Dataset, query: Query, rho: usize) -> Result<f64> {
    let n = dataset.len();
    if n > 20 {
        return Err(invalid(format!("exhaustive enumeration needs n <= 20, got {n}")));
    }
    let full = query.evaluate(dataset);
    let records = dataset.records();
    let mut best = 0.0f64;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize > rho {
            continue;
        }
        let kept: Vec<_> = (0..n)
            .filter(|&j| mask & (1 << j) == 0)
            .map(|j| records[j].clone())
            .collect();
        best = best.max((full - query.evaluate_records(&kept)).abs());
    }
    Ok(best)
}

/// Right-hand side of the sum-extension error bound for a run that
/// selected `ell`. Oracle: reads exact per-domain contents.
pub fn sum_extension_error_bound(dataset: &Dataset, budget: &BudgetFunction, beta: f64, ell: usize) -> Result<f64> {
    sum_extension_bound(dataset, budget, beta, ell)
}

/// Rank error of a max estimate `t`: the number of records above `t`, or
/// `n` when `t` overshoots so far that its grid cell `(t/2, t]` lies
/// entirely above the data.
pub fn rank_error(sorted_values: &[u64], t: f64) -> usize {
    let n = sorted_values.len();
    let max = sorted_values.last().copied().unwrap_or(0) as f64;
    if t / 2.0 >= max && t > 1.0 {
        return n;
    }
    n - sorted_values.partition_point(|&v| (v as f64) <= t)
}

/// Dataset, drop count.
pub fn load_source(config: &ExperimentConfig) -> Result<(Dataset, Option<usize>)> {
    match &config.source {
        DataSource::Generated { distribution, n } => {
            let spec = GeneratorSpec {
                distribution: *distribution,
                n: *n,
                bound: config.bound,
                seed: config.seed,
            };
            Ok((generate(&spec)?, None))
        }
        DataSource::Csv { path, value_column, key_column } => {
            let load = load_csv(path, value_column, key_column.as_deref(), config.bound)?;
            Ok((load.dataset, Some(load.dropped)))
        }
    }
}

/// `(estimate, eps_tau)` of one trial.
pub fn run_method(
    method: Method,
    query: Query,
    dataset: &Dataset,
    budget: &BudgetFunction,
    beta: f64,
    noise: &mut NoiseSource,
) -> Result<(f64, Option<f64>)> {
    method.check(query)?;
    Ok(match method {
        Method::PrdpCount => {
            let run = prdp_count_run(dataset, budget, beta, noise)?;
            (run.estimate, Some(run.eps_tau))
        }
        Method::PrdpExt => {
            let run = prdp_sum_extension_run(dataset, budget, beta, None, noise)?;
            (run.estimate, Some(run.eps_tau))
        }
        Method::PrdpFramework => {
            let mech = standard_mechanism(query);
            let run = prdp_framework_run(dataset, budget, beta, mech.as_ref(), noise)?;
            (run.estimate, Some(run.eps_tau))
        }
        Method::PrldpCount => {
            let run = prldp_count(dataset.records(), budget, beta, noise)?;
            (run.estimate, Some(run.eps_tau))
        }
        Method::PrldpFramework => {
            let mech = standard_ldp_mechanism(query, budget)?;
            let run = prldp_framework_run(dataset.records(), budget, beta, mech.as_ref(), noise)?;
            (run.estimate, Some(run.eps_tau))
        }
        Method::Naive => (naive_baseline(dataset, budget, query, beta, noise)?, None),
    })
}

fn worker_count() -> Option<usize> {
    std::env::var(WORKERS_ENV).ok()?.trim().parse().ok().filter(|&w| w > 0)
}

/// Run `config.trials` independent trials and score them.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    config.method.check(config.query)?;
    let budget = BudgetFunction::builtin(config.budget, config.bound, config.eps_max)?;
    let (dataset, dropped_rows) = load_source(config)?;
    run_experiment_on(config, &dataset, &budget, dropped_rows)
}

/// [`run_experiment`] on an already-built dataset and budget.
pub fn run_experiment_on(
    config: &ExperimentConfig,
    dataset: &Dataset,
    budget: &BudgetFunction,
    dropped_rows: Option<usize>,
) -> Result<ExperimentReport> {
    config.validate()?;
    config.method.check(config.query)?;
    let truth = config.query.evaluate(dataset);
    let mut sorted: Vec<u64> = dataset.values().collect();
    sorted.sort_unstable();
    let n = dataset.len();

    let family = if config.zero_noise {
        StreamFamily::zero()
    } else {
        StreamFamily::seeded(subseed(config.seed, u64::MAX))
    };
    let score = |estimate: f64| -> (f64, f64) {
        let abs = (estimate - truth).abs();
        let rel = match config.query {
            Query::Max => rank_error(&sorted, estimate) as f64 / n.max(1) as f64,
            _ if truth != 0.0 => abs / truth.abs(),
            _ => abs,
        };
        (abs, rel)
    };
    let trial = |t: usize| -> Result<TrialResult> {
        let mut noise = family.stream(t as u64);
        let start = Instant::now();
        let (estimate, eps_tau) = run_method(config.method, config.query, dataset, budget, config.beta, &mut noise)?;
        let runtime_secs = start.elapsed().as_secs_f64();
        let (abs_error, relative_error) = score(estimate);
        Ok(TrialResult { trial: t, estimate, abs_error, relative_error, runtime_secs, eps_tau })
    };

    let trials: Vec<TrialResult> = match worker_count() {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| invalid(e.to_string()))?
            .install(|| (0..config.trials).into_par_iter().map(trial).collect::<Result<_>>())?,
        None => (0..config.trials).into_par_iter().map(trial).collect::<Result<_>>()?,
    };

    let rel: Vec<f64> = trials.iter().map(|t| t.relative_error).collect();
    let rt: Vec<f64> = trials.iter().map(|t| t.runtime_secs).collect();
    Ok(ExperimentReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config: config.clone(),
        n,
        dropped_rows,
        true_answer: truth,
        eps_min_oracle: eps_min_oracle(dataset, budget).ok(),
        eps_min: budget.eps_min(),
        domain_count: budget.domain_count(),
        trimmed_mean_relative_error: trimmed_mean(&rel),
        trimmed_mean_runtime_secs: trimmed_mean(&rt),
        trials,
    })
}
