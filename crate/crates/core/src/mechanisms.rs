//! Standard (uniform-budget) DP mechanisms that the framework lifts.
//!
//! The sum and max mechanisms here are stand-ins with the expected error
//! profile, built on a power-of-two grid over `[1, U]`.

use std::collections::HashSet;

use crate::error::{PrdpError, Result};
use crate::noise::{check_beta, NoiseSource};
use crate::query::{distinct_key, Query};
use crate::record::Dataset;

/// An ε-DP mechanism under add/delete-one neighbours.
pub trait DpMechanism: Send + Sync {
    /// Registry name.
    fn name(&self) -> &'static str;

    fn query(&self) -> Query;

    /// Smallest dataset the mechanism accepts.
    fn min_records(&self) -> usize {
        0
    }

    fn run(&self, data: &Dataset, eps: f64, beta: f64, noise: &mut NoiseSource) -> Result<f64>;
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(PrdpError::InvalidParameter(format!(
            "privacy budget must be positive and finite, got {eps}"
        )))
    }
}

fn check_min(mech: &dyn DpMechanism, data: &Dataset) -> Result<()> {
    if data.len() < mech.min_records() {
        return Err(PrdpError::TooFewRecords {
            mechanism: mech.name().to_string(),
            required: mech.min_records(),
            got: data.len(),
        });
    }
    Ok(())
}

/// Grid `1, 2, 4, ..., 2^g` with `2^g` the smallest power of two `>= bound`.
pub fn power_grid(bound: u64) -> Vec<u64> {
    let g = bound.max(1).next_power_of_two().trailing_zeros();
    (0..=g).map(|j| 1u64 << j).collect()
}

/// `count + Lap(1/eps)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct LaplaceCount;

impl DpMechanism for LaplaceCount {
    fn name(&self) -> &'static str {
        "laplace-count"
    }

    fn query(&self) -> Query {
        Query::Count
    }

    fn run(&self, data: &Dataset, eps: f64, beta: f64, noise: &mut NoiseSource) -> Result<f64> {
        check_eps(eps)?;
        check_beta(beta)?;
        Ok(data.len() as f64 + noise.laplace_unchecked(1.0 / eps))
    }
}

/// Two-stage clipped sum.
///
/// Stage A spends `eps/2` on an above-threshold scan of the grid from the
/// top, picking the largest `tau` whose noisy count of values above `tau`
/// clears `ln(2 log2 U / beta) * 2/(eps/2)`; the smallest grid point is the
/// fallback. Stage B spends `eps/2` on `sum(min(v, 2 tau)) + Lap(2 tau/(eps/2))`.
#[derive(Debug, Clone, Copy, Default)]
pub struct DpSum;

impl DpSum {
    /// Clipping threshold chosen by stage A.
    pub fn select_tau(data: &Dataset, eps: f64, beta: f64, noise: &mut NoiseSource) -> Result<u64> {
        check_eps(eps)?;
        check_beta(beta)?;
        let grid = power_grid(data.bound());
        let half = eps / 2.0;
        let log_u = (grid.len() - 1).max(1) as f64;
        let threshold = (2.0 * log_u / beta).ln() * (2.0 / half);
        // Threshold noise at half the query noise scale: the above-count
        // queries are monotone in the dataset.
        let rho = noise.laplace_unchecked(1.0 / half);

        let mut values: Vec<u64> = data.values().collect();
        values.sort_unstable();
        for &tau in grid.iter().rev() {
            let above = values.len() - values.partition_point(|&v| v <= tau);
            let q = above as f64 + noise.laplace_unchecked(2.0 / half);
            if q >= threshold + rho {
                return Ok(tau);
            }
        }
        Ok(grid[0])
    }
}

impl DpMechanism for DpSum {
    fn name(&self) -> &'static str {
        "dp-sum"
    }

    fn query(&self) -> Query {
        Query::Sum
    }

    fn run(&self, data: &Dataset, eps: f64, beta: f64, noise: &mut NoiseSource) -> Result<f64> {
        let tau = Self::select_tau(data, eps, beta, noise)?;
        let clip = 2 * tau;
        let clipped: u128 = data.values().map(|v| v.min(clip) as u128).sum();
        Ok(clipped as f64 + noise.laplace_unchecked(clip as f64 / (eps / 2.0)))
    }
}

/// Exponential mechanism for the maximum over the power-of-two grid.
///
/// Utility of grid point `t` is `-max(#{v > t}, k - #{v in cell(t) or above})`
/// where `cell(t) = (t/2, t]` (the first cell also holds 0) and
/// `k = ceil((2/eps) ln(G/beta))` for a grid of `G` points. Both counts move
/// by at most one between neighbours, so the sensitivity is 1.
#[derive(Debug, Clone, Copy, Default)]
pub struct DpMax;

/// Utility of each grid point, in grid order.
pub fn max_utilities(data: &Dataset, eps: f64, beta: f64) -> Result<Vec<(u64, f64)>> {
    check_eps(eps)?;
    check_beta(beta)?;
    let grid = power_grid(data.bound());
    let k = ((2.0 / eps) * (grid.len() as f64 / beta).ln()).ceil();
    let mut values: Vec<u64> = data.values().collect();
    values.sort_unstable();
    let n = values.len();
    let above = |x: u64| n - values.partition_point(|&v| v <= x);
    Ok(grid
        .iter()
        .map(|&t| {
            let a = above(t) as f64;
            let b = if t == 1 { n } else { above(t / 2) } as f64;
            (t, -a.max(k - b))
        })
        .collect())
}

impl DpMechanism for DpMax {
    fn name(&self) -> &'static str {
        "dp-max"
    }

    fn query(&self) -> Query {
        Query::Max
    }

    fn min_records(&self) -> usize {
        1
    }

    fn run(&self, data: &Dataset, eps: f64, beta: f64, noise: &mut NoiseSource) -> Result<f64> {
        check_min(self, data)?;
        let utils = max_utilities(data, eps, beta)?;
        let scores: Vec<f64> = utils.iter().map(|&(_, u)| eps * u / 2.0).collect();
        let pick = noise
            .select_log_weights(&scores)
            .expect("grid is never empty");
        Ok(utils[pick].0 as f64)
    }
}

/// `#distinct keys + Lap(1/eps)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct DpDistinct;

impl DpMechanism for DpDistinct {
    fn name(&self) -> &'static str {
        "dp-distinct"
    }

    fn query(&self) -> Query {
        Query::Distinct
    }

    fn run(&self, data: &Dataset, eps: f64, beta: f64, noise: &mut NoiseSource) -> Result<f64> {
        check_eps(eps)?;
        check_beta(beta)?;
        let distinct = data
            .records()
            .iter()
            .map(distinct_key)
            .collect::<HashSet<_>>()
            .len();
        Ok(distinct as f64 + noise.laplace_unchecked(1.0 / eps))
    }
}

/// Returns the exact answer. NOT private; for isolating the framework's
/// first phase in tests.
#[derive(Debug, Clone, Copy)]
pub struct ExactStub(pub Query);

impl DpMechanism for ExactStub {
    fn name(&self) -> &'static str {
        "exact-stub"
    }

    fn query(&self) -> Query {
        self.0
    }

    fn run(&self, data: &Dataset, _eps: f64, _beta: f64, _noise: &mut NoiseSource) -> Result<f64> {
        Ok(self.0.evaluate(data))
    }
}

/// Registry names.
pub const MECHANISM_NAMES: [&str; 5] = ["laplace-count", "dp-sum", "dp-max", "dp-distinct", "exact-stub"];

/// Look up a mechanism by name. `exact-stub` answers `query`.
pub fn mechanism_by_name(name: &str, query: Query) -> Result<Box<dyn DpMechanism>> {
    Ok(match name {
        "laplace-count" => Box::new(LaplaceCount),
        "dp-sum" => Box::new(DpSum),
        "dp-max" => Box::new(DpMax),
        "dp-distinct" => Box::new(DpDistinct),
        "exact-stub" => Box::new(ExactStub(query)),
        other => return Err(PrdpError::UnknownMechanism(other.to_string())),
    })
}

/// The standard mechanism used for `query`.
pub fn standard_mechanism(query: Query) -> Box<dyn DpMechanism> {
    match query {
        Query::Count => Box::new(LaplaceCount),
        Query::Sum => Box::new(DpSum),
        Query::Max => Box::new(DpMax),
        Query::Distinct => Box::new(DpDistinct),
    }
}
