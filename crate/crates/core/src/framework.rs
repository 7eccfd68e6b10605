//! Lifting a standard DP mechanism to per-record budgets.
//!
//! Phase 1 runs the per-record count under `E/2` with failure rate `beta/2`
//! to find `eps_tau`. Phase 2 runs the mechanism on the records whose
//! domain index is at least `ell`, at budget `eps_tau/2`.

use serde::Serialize;

use crate::budget::BudgetFunction;
use crate::count::{prdp_count_run, CountRun};
use crate::error::{PrdpError, Result};
use crate::mechanisms::{standard_mechanism, DpMechanism};
use crate::noise::{check_beta, NoiseSource};
use crate::query::Query;
use crate::record::Dataset;

/// Trace of one framework run.
#[derive(Debug, Clone, Serialize)]
pub struct FrameworkRun {
    /// Phase-1 trace under the halved budget function.
    pub phase1: CountRun,
    pub ell: usize,
    /// Floor budget of domain `ell` under the original budget function.
    pub eps_tau: f64,
    /// Budget handed to the mechanism: `eps_tau / 2`.
    pub phase2_eps: f64,
    #[serde(skip)]
    pub retained: Dataset,
    pub excluded: usize,
    pub estimate: f64,
}

/// Records with domain index `>= ell`.
pub fn retained_records(dataset: &Dataset, budget: &BudgetFunction, ell: usize) -> Result<Dataset> {
    for r in dataset.records() {
        budget.domain_of(r)?;
    }
    Ok(dataset.filter(|r| budget.domain_of(r).is_ok_and(|i| i >= ell)))
}

/// Runs both phases and returns the full trace.
pub fn prdp_framework_run(
    dataset: &Dataset,
    budget: &BudgetFunction,
    beta: f64,
    mechanism: &dyn DpMechanism,
    noise: &mut NoiseSource,
) -> Result<FrameworkRun> {
    check_beta(beta)?;
    let halved = budget.halved();
    let phase1 = prdp_count_run(dataset, &halved, beta / 2.0, noise)?;
    let ell = phase1.ell;
    let eps_tau = budget.partition().floor(ell);
    let retained = retained_records(dataset, budget, ell)?;
    if retained.len() < mechanism.min_records() {
        return Err(PrdpError::TooFewRecords {
            mechanism: mechanism.name().to_string(),
            required: mechanism.min_records(),
            got: retained.len(),
        });
    }
    let phase2_eps = eps_tau / 2.0;
    let estimate = mechanism.run(&retained, phase2_eps, beta / 2.0, noise)?;
    Ok(FrameworkRun {
        phase1,
        ell,
        eps_tau,
        phase2_eps,
        excluded: dataset.len() - retained.len(),
        retained,
        estimate,
    })
}

/// Per-record DP answer through `mechanism`.
pub fn prdp_framework(
    dataset: &Dataset,
    budget: &BudgetFunction,
    beta: f64,
    mechanism: &dyn DpMechanism,
    noise: &mut NoiseSource,
) -> Result<f64> {
    Ok(prdp_framework_run(dataset, budget, beta, mechanism, noise)?.estimate)
}

/// Budget spent on each record of `dataset` by `run`: `(phase 1, phase 2)`.
pub fn budget_spent(
    run: &FrameworkRun,
    dataset: &Dataset,
    budget: &BudgetFunction,
) -> Result<Vec<(f64, f64)>> {
    dataset
        .records()
        .iter()
        .map(|r| {
            let e = budget.evaluate(r)?;
            let phase2 = if budget.domain_of(r)? >= run.ell { run.phase2_eps } else { 0.0 };
            Ok((e / 2.0, phase2))
        })
        .collect()
}

/// The query's standard mechanism on the full dataset at `eps_min`.
pub fn naive_baseline(
    dataset: &Dataset,
    budget: &BudgetFunction,
    query: Query,
    beta: f64,
    noise: &mut NoiseSource,
) -> Result<f64> {
    standard_mechanism(query).run(dataset, budget.eps_min(), beta, noise)
}
