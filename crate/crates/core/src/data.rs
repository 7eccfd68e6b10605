//! Synthetic datasets and CSV ingestion.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, Zipf};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, PrdpError, Result};
use crate::record::{Dataset, Record};

/// Largest support for which Zipf sampling uses an explicit CDF table.
pub const ZIPF_TABLE_LIMIT: u64 = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ValueDistribution {
    /// Density proportional to `exp(-(x - mu)^2 / (2 sigma^2))`.
    Normal { mu: f64, sigma: f64 },
    /// Density proportional to `(x + a)^(-b)`.
    Zipf { a: f64, b: f64 },
}

/// What to generate: `n` integer values in `[1, bound]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub distribution: ValueDistribution,
    pub n: usize,
    pub bound: u64,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.bound < 1 {
            return Err(invalid("value bound must be at least 1"));
        }
        match self.distribution {
            ValueDistribution::Normal { mu, sigma } => {
                if !(mu > 0.0 && sigma > 0.0 && mu.is_finite() && sigma.is_finite()) {
                    return Err(invalid(format!("normal needs mu, sigma > 0, got mu={mu} sigma={sigma}")));
                }
            }
            ValueDistribution::Zipf { a, b } => {
                if !(a >= 0.0 && b > 1.0 && a.is_finite() && b.is_finite()) {
                    return Err(invalid(format!("zipf needs a >= 0 and b > 1, got a={a} b={b}")));
                }
                if self.bound > ZIPF_TABLE_LIMIT && a.fract() != 0.0 {
                    return Err(invalid(format!(
                        "zipf with non-integer a={a} needs bound <= {ZIPF_TABLE_LIMIT}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Generate the dataset described by `spec`. Deterministic per seed.
pub fn generate(spec: &GeneratorSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let values: Vec<u64> = match spec.distribution {
        ValueDistribution::Normal { mu, sigma } => {
            let dist = Normal::new(mu, sigma).map_err(|e| invalid(e.to_string()))?;
            let hi = spec.bound as f64;
            (0..spec.n)
                .map(|_| loop {
                    let x = dist.sample(&mut rng).round();
                    if (1.0..=hi).contains(&x) {
                        break x as u64;
                    }
                })
                .collect()
        }
        ValueDistribution::Zipf { a, b } if spec.bound <= ZIPF_TABLE_LIMIT => {
            let cdf = zipf_cdf(a, b, spec.bound);
            let total = *cdf.last().expect("bound >= 1");
            (0..spec.n)
                .map(|_| {
                    let u = rng.random::<f64>() * total;
                    (cdf.partition_point(|&c| c <= u) as u64 + 1).min(spec.bound)
                })
                .collect()
        }
        ValueDistribution::Zipf { a, b } => {
            // k = x + a is Zipf on [1, bound + a] conditioned on k > a.
            let shift = a as u64;
            let dist = Zipf::new((spec.bound + shift) as f64, b).map_err(|e| invalid(e.to_string()))?;
            (0..spec.n)
                .map(|_| loop {
                    let k = dist.sample(&mut rng) as u64;
                    if k > shift {
                        break k - shift;
                    }
                })
                .collect()
        }
    };
    Dataset::from_values(values, spec.bound)
}

/// Unnormalised cumulative weights of `(x + a)^(-b)` for `x = 1..=bound`.
fn zipf_cdf(a: f64, b: f64, bound: u64) -> Vec<f64> {
    let mut acc = 0.0;
    (1..=bound)
        .map(|x| {
            acc += (x as f64 + a).powf(-b);
            acc
        })
        .collect()
}

/// A loaded CSV file.
#[derive(Debug, Clone)]
pub struct CsvLoad {
    pub dataset: Dataset,
    /// Rows dropped as non-numeric, negative, above the bound, or missing
    /// a field.
    pub dropped: usize,
    /// Data rows read (header excluded).
    pub total: usize,
}

/// Load `value_column` (and optionally a categorical `key_column`) from a
/// headed CSV file.
///
/// Values are rounded half-to-even to whole units. Rows that are
/// non-numeric, negative or above `bound` after rounding are dropped. Keys
/// are dictionary-encoded in order of first appearance.
pub fn load_csv(path: &Path, value_column: &str, key_column: Option<&str>, bound: u64) -> Result<CsvLoad> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| PrdpError::MissingColumn {
                column: name.to_string(),
                path: path.to_path_buf(),
            })
    };
    let vcol = find(value_column)?;
    let kcol = key_column.map(find).transpose()?;

    let mut keys: HashMap<String, u64> = HashMap::new();
    let mut records = Vec::new();
    let mut total = 0;
    for row in reader.records() {
        let row = row?;
        total += 1;
        let Some(v) = row.get(vcol).and_then(|s| parse_value(s, bound)) else {
            continue;
        };
        match kcol {
            None => records.push(Record::scalar(v)),
            Some(k) => {
                let Some(key) = row.get(k).map(str::trim).filter(|s| !s.is_empty()) else {
                    continue;
                };
                let next = keys.len() as u64;
                let id = *keys.entry(key.to_string()).or_insert(next);
                records.push(Record::keyed(v, id));
            }
        }
    }
    let dim = if kcol.is_some() { 2 } else { 1 };
    let dropped = total - records.len();
    Ok(CsvLoad {
        dataset: Dataset::new(records, dim, bound)?,
        dropped,
        total,
    })
}

fn parse_value(s: &str, bound: u64) -> Option<u64> {
    let x: f64 = s.trim().parse().ok()?;
    if !x.is_finite() || x < 0.0 {
        return None;
    }
    let r = x.round_ties_even();
    (r <= bound as f64).then_some(r as u64)
}
