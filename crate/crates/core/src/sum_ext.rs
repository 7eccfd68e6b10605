//! Sum estimation by direct extension of domain-partitioned counting.
//!
//! Domain `i` gets its sum perturbed with `Lap(s_i)` where `s_i` bounds
//! `v / E(r)` over every record the domain can hold, and the selection
//! threshold becomes `s_i ln(L / beta)`.

use serde::Serialize;

use crate::budget::BudgetFunction;
use crate::count::{select_and_aggregate, stable_sum};
use crate::error::{invalid, PrdpError, Result};
use crate::noise::{check_beta, NoiseSource};
use crate::record::Dataset;

/// Trace of one sum-extension run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SumRun {
    pub noisy_sums: Vec<f64>,
    pub scales: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub ell: usize,
    pub eps_tau: f64,
    pub estimate: f64,
}

/// Upper bounds on the primary value per domain, used for budgets without
/// a monotone inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainValueBounds(pub Vec<u64>);

/// Noise scale `s_i` for domain `i`.
///
/// For builtin budgets this is `v_i / E(v_i)` with `v_i` the largest
/// integer value whose budget falls in domain `i`; since `v / E(v)` is
/// increasing in `v`, that is exactly `max_{r in X_i} v / E(r)`. Domains
/// with no integer value get the real-valued supremum
/// `E^-1(floor_i) / floor_i`. Custom budgets use `bounds[i] / floor_i`.
pub fn domain_sum_scale(
    budget: &BudgetFunction,
    i: usize,
    bounds: Option<&DomainValueBounds>,
) -> Result<f64> {
    let p = budget.partition();
    if i < 1 || i > p.len() {
        return Err(invalid(format!("domain index {i} outside 1..={}", p.len())));
    }
    let floor = p.floor(i);
    if let Some(DomainValueBounds(b)) = bounds {
        if b.len() != p.len() {
            return Err(PrdpError::LengthMismatch {
                left: b.len(),
                right: p.len(),
            });
        }
        return Ok(b[i - 1] as f64 / floor);
    }
    if !budget.is_monotone() {
        return Err(PrdpError::MissingValueBound);
    }
    match budget.max_value_in_domain(i) {
        Some(v) => Ok(v as f64 / budget.evaluate_value(v)?),
        None => {
            let v = budget.monotone_inverse(floor).unwrap_or(budget.bound());
            Ok(v as f64 / floor)
        }
    }
}

/// `s_1..=s_L`.
pub fn domain_sum_scales(
    budget: &BudgetFunction,
    bounds: Option<&DomainValueBounds>,
) -> Result<Vec<f64>> {
    (1..=budget.domain_count())
        .map(|i| domain_sum_scale(budget, i, bounds))
        .collect()
}

/// Exact per-domain sums of the primary value.
pub fn exact_domain_sums(dataset: &Dataset, budget: &BudgetFunction) -> Result<Vec<f64>> {
    let mut sums = vec![0u128; budget.domain_count()];
    for r in dataset.records() {
        sums[budget.domain_of(r)? - 1] += r.value() as u128;
    }
    Ok(sums.into_iter().map(|s| s as f64).collect())
}

pub fn prdp_sum_extension_run(
    dataset: &Dataset,
    budget: &BudgetFunction,
    beta: f64,
    bounds: Option<&DomainValueBounds>,
    noise: &mut NoiseSource,
) -> Result<SumRun> {
    check_beta(beta)?;
    let p = budget.partition();
    let scales = domain_sum_scales(budget, bounds)?;
    let log_factor = (p.len() as f64 / beta).ln();
    let thresholds: Vec<f64> = scales.iter().map(|s| s * log_factor).collect();
    let noisy_sums: Vec<f64> = exact_domain_sums(dataset, budget)?
        .into_iter()
        .zip(&scales)
        .map(|(sum, &s)| {
            // a domain holding only v = 0 has a deterministic sum
            if s > 0.0 {
                sum + noise.laplace_unchecked(s)
            } else {
                sum
            }
        })
        .collect();
    let sel = select_and_aggregate(p, &noisy_sums, &thresholds)?;
    Ok(SumRun {
        noisy_sums,
        scales,
        thresholds,
        ell: sel.ell,
        eps_tau: sel.eps_tau,
        estimate: sel.estimate,
    })
}

/// Sum extension: `(eps_tau, estimate)`.
pub fn prdp_sum_extension(
    dataset: &Dataset,
    budget: &BudgetFunction,
    beta: f64,
    noise: &mut NoiseSource,
) -> Result<(f64, f64)> {
    let run = prdp_sum_extension_run(dataset, budget, beta, None, noise)?;
    Ok((run.eps_tau, run.estimate))
}

/// Right-hand side of the sum-extension error bound for a run that
/// selected `ell`:
/// `sum_{k <= i < ell, X_i nonempty} 2 s_i ln(L/beta) + sum_{i >= ell} s_i ln(L/beta)`,
/// with `k` the first non-empty domain. Evaluation only; reads exact
/// per-domain contents.
pub fn sum_extension_bound(
    dataset: &Dataset,
    budget: &BudgetFunction,
    beta: f64,
    ell: usize,
) -> Result<f64> {
    check_beta(beta)?;
    let l = budget.domain_count();
    if ell < 1 || ell > l {
        return Err(invalid(format!("ell {ell} outside 1..={l}")));
    }
    let scales = domain_sum_scales(budget, None)?;
    let counts = crate::count::exact_domain_counts(dataset, budget)?;
    let log_factor = (l as f64 / beta).ln();
    let excluded: Vec<f64> = (0..ell - 1)
        .filter(|&k| counts[k] > 0)
        .map(|k| 2.0 * scales[k] * log_factor)
        .collect();
    let retained: Vec<f64> = scales[ell - 1..].iter().map(|s| s * log_factor).collect();
    Ok(stable_sum(&excluded) + stable_sum(&retained))
}
