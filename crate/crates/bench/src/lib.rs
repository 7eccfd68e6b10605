//! Benchmark fixtures.

use prdp_core::{generate, BudgetFunction, Dataset, GeneratorSpec, ValueDistribution};

pub const BOUND: u64 = 1_000_000_000_000;
pub const EPS_MAX: f64 = 100.0;
pub const BETA: f64 = 0.1;

/// Normal(5e4, 5e4) values truncated to [0, U], as used by the accuracy runs.
pub fn normal_dataset(n: usize, seed: u64) -> Dataset {
    generate(&GeneratorSpec {
        distribution: ValueDistribution::Normal { mu: 5e4, sigma: 5e4 },
        n,
        bound: BOUND,
        seed,
    })
    .expect("valid generator spec")
}

pub fn inverse_budget() -> BudgetFunction {
    BudgetFunction::inverse(1e4, BOUND, EPS_MAX).expect("valid budget")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_build() {
        assert_eq!(normal_dataset(100, 1).len(), 100);
        assert!(inverse_budget().partition().len() > 1);
    }
}
