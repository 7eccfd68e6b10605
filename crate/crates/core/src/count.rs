//! Per-record DP counting over privacy-specified domains.
//!
//! Each domain's count gets Laplace noise calibrated to that domain's
//! floor budget. The first domain whose noisy count clears its threshold
//! fixes `eps_tau`; the estimate sums that domain and everything above it.

use serde::Serialize;

use crate::budget::BudgetFunction;
use crate::error::{PrdpError, Result};
use crate::noise::{check_beta, NoiseSource};
use crate::partition::DomainPartition;
use crate::record::Dataset;

/// Compensated (Neumaier) sum.
pub(crate) fn stable_sum<'a>(xs: impl IntoIterator<Item = &'a f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for &x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Outcome of threshold selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Selection {
    /// 1-based index of the first domain at or above its threshold.
    pub ell: usize,
    /// Floor budget of domain `ell`.
    pub eps_tau: f64,
    pub estimate: f64,
}

/// Full trace of one counting run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountRun {
    pub noisy_counts: Vec<f64>,
    pub thresholds: Vec<f64>,
    pub ell: usize,
    pub eps_tau: f64,
    pub estimate: f64,
}

/// `T_i = ln(L / beta) / floor_i`.
pub fn threshold(partition: &DomainPartition, i: usize, beta: f64) -> Result<f64> {
    check_beta(beta)?;
    if i < 1 || i > partition.len() {
        return Err(crate::error::invalid(format!(
            "domain index {i} outside 1..={}",
            partition.len()
        )));
    }
    Ok((partition.len() as f64 / beta).ln() / partition.floor(i))
}

/// All `L` thresholds.
pub fn thresholds(partition: &DomainPartition, beta: f64) -> Result<Vec<f64>> {
    (1..=partition.len())
        .map(|i| threshold(partition, i, beta))
        .collect()
}

/// Exact number of records per domain (no noise).
pub fn exact_domain_counts(dataset: &Dataset, budget: &BudgetFunction) -> Result<Vec<u64>> {
    let mut counts = vec![0u64; budget.domain_count()];
    for r in dataset.records() {
        counts[budget.domain_of(r)? - 1] += 1;
    }
    Ok(counts)
}

/// Per-domain counts plus `Lap(1 / floor_i)`.
pub fn noisy_domain_counts(
    dataset: &Dataset,
    budget: &BudgetFunction,
    noise: &mut NoiseSource,
) -> Result<Vec<f64>> {
    let p = budget.partition();
    let exact = exact_domain_counts(dataset, budget)?;
    Ok(exact
        .iter()
        .enumerate()
        .map(|(k, &c)| c as f64 + noise.laplace_unchecked(1.0 / p.floor(k + 1)))
        .collect())
}

/// Pick `ell` as the first domain with `noisy_counts[i] >= thresholds[i]`
/// (falling back to `L`), and sum domains `ell..=L`. Pure.
pub fn select_and_aggregate(
    partition: &DomainPartition,
    noisy_counts: &[f64],
    thresholds: &[f64],
) -> Result<Selection> {
    if noisy_counts.len() != thresholds.len() {
        return Err(PrdpError::LengthMismatch {
            left: noisy_counts.len(),
            right: thresholds.len(),
        });
    }
    if noisy_counts.len() != partition.len() {
        return Err(PrdpError::LengthMismatch {
            left: noisy_counts.len(),
            right: partition.len(),
        });
    }
    let l = partition.len();
    let ell = noisy_counts
        .iter()
        .zip(thresholds)
        .position(|(q, t)| q >= t)
        .map_or(l, |k| k + 1);
    Ok(Selection {
        ell,
        eps_tau: partition.floor(ell),
        estimate: stable_sum(&noisy_counts[ell - 1..]),
    })
}

/// Per-record DP count; returns the full run trace.
pub fn prdp_count_run(
    dataset: &Dataset,
    budget: &BudgetFunction,
    beta: f64,
    noise: &mut NoiseSource,
) -> Result<CountRun> {
    check_beta(beta)?;
    let p = budget.partition();
    let noisy_counts = noisy_domain_counts(dataset, budget, noise)?;
    let thresholds = thresholds(p, beta)?;
    let sel = select_and_aggregate(p, &noisy_counts, &thresholds)?;
    Ok(CountRun {
        noisy_counts,
        thresholds,
        ell: sel.ell,
        eps_tau: sel.eps_tau,
        estimate: sel.estimate,
    })
}

/// Per-record DP count: `(eps_tau, estimate)`.
pub fn prdp_count(
    dataset: &Dataset,
    budget: &BudgetFunction,
    beta: f64,
    noise: &mut NoiseSource,
) -> Result<(f64, f64)> {
    let run = prdp_count_run(dataset, budget, beta, noise)?;
    Ok((run.eps_tau, run.estimate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::Record;
    use proptest::prelude::*;

    fn fig2() -> BudgetFunction {
        BudgetFunction::inverse(1e4, 1_280_000_000, 4.096).unwrap()
    }

    #[test]
    fn first_threshold_of_worked_partition() {
        let b = fig2();
        let t1 = threshold(b.partition(), 1, 0.1).unwrap();
        // ln(190) / 7.8125e-6 = 671619.08
        assert!((t1 - 671_619.08).abs() < 0.01, "{t1}");
    }

    #[test]
    fn thresholds_halve() {
        let b = fig2();
        let t = thresholds(b.partition(), 0.1).unwrap();
        for w in t.windows(2) {
            assert_eq!(w[1], w[0] / 2.0);
        }
    }

    #[test]
    fn single_domain_threshold() {
        let p = DomainPartition::new(0.5, 1.0).unwrap();
        assert_eq!(p.len(), 1);
        let t = threshold(&p, 1, 0.1).unwrap();
        assert_eq!(t, (1.0f64 / 0.1).ln() / 0.5);
        assert!(threshold(&p, 2, 0.1).is_err());
        assert!(threshold(&p, 1, 1.0).is_err());
    }

    #[test]
    fn empty_dataset_zero_noise() {
        let b = fig2();
        let d = Dataset::empty(1, b.bound()).unwrap();
        let c = noisy_domain_counts(&d, &b, &mut NoiseSource::zero()).unwrap();
        assert_eq!(c, vec![0.0; 19]);
    }

    #[test]
    fn all_top_budget_lands_in_last_domain() {
        let b = fig2();
        let d = Dataset::from_values(vec![10; 500], b.bound()).unwrap();
        let c = noisy_domain_counts(&d, &b, &mut NoiseSource::zero()).unwrap();
        let mut want = vec![0.0; 19];
        want[18] = 500.0;
        assert_eq!(c, want);
    }

    #[test]
    fn no_pass_falls_back_to_last_domain() {
        let p = DomainPartition::new(1.0, 8.0).unwrap();
        let sel = select_and_aggregate(&p, &[0.0, 1.0, 2.0], &[10.0, 10.0, 10.0]).unwrap();
        assert_eq!(sel.ell, 3);
        assert_eq!(sel.estimate, 2.0);
        assert_eq!(sel.eps_tau, 4.0);
    }

    #[test]
    fn first_domain_passes() {
        let p = DomainPartition::new(1.0, 8.0).unwrap();
        let sel = select_and_aggregate(&p, &[10.0, 1.0, 2.0], &[10.0, 10.0, 10.0]).unwrap();
        assert_eq!(sel.ell, 1);
        assert_eq!(sel.estimate, 13.0);
        assert_eq!(sel.eps_tau, 1.0);
    }

    #[test]
    fn length_mismatch() {
        let p = DomainPartition::new(1.0, 8.0).unwrap();
        assert!(matches!(
            select_and_aggregate(&p, &[1.0, 2.0], &[1.0, 2.0, 3.0]),
            Err(PrdpError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn all_top_budget_zero_noise_is_exact() {
        let b = BudgetFunction::inverse(1e4, 1_000_000_000_000, 100.0).unwrap();
        let d = Dataset::from_values(vec![7; 1_000_000], b.bound()).unwrap();
        let run = prdp_count_run(&d, &b, 0.1, &mut NoiseSource::zero()).unwrap();
        assert_eq!(run.estimate, 1_000_000.0);
        assert_eq!(run.ell, b.domain_count());
    }

    #[test]
    fn all_top_budget_error_concentrates() {
        let b = BudgetFunction::inverse(1e4, 1_280_000_000, 4.096).unwrap();
        let d = Dataset::from_values(vec![1; 1_000_000], b.bound()).unwrap();
        let l = b.domain_count();
        let t_last = threshold(b.partition(), l, 0.1).unwrap();
        let mut errs: Vec<f64> = (0..1000)
            .map(|s| {
                let mut ns = NoiseSource::for_index(5, s);
                let (_, est) = prdp_count(&d, &b, 0.1, &mut ns).unwrap();
                (est - 1e6).abs()
            })
            .collect();
        let within = errs.iter().filter(|&&e| e <= 2.0 * t_last).count();
        assert!(within >= 900, "{within}");
        errs.sort_by(f64::total_cmp);
        let p90 = errs[899];
        // (2 / eps_max) ln(L / beta), plus 25% headroom
        let bound = 2.0 / b.eps_max() * (l as f64 / 0.1).ln() * 1.25;
        assert!(p90 <= bound, "p90 {p90} bound {bound}");
    }

    #[test]
    fn zero_noise_excluded_domains_are_below_threshold() {
        let b = fig2();
        let values: Vec<u64> = (0..2000u64).map(|k| 1 + k * 600_000).collect();
        let d = Dataset::from_values(values, b.bound()).unwrap();
        let run = prdp_count_run(&d, &b, 0.1, &mut NoiseSource::zero()).unwrap();
        let exact = exact_domain_counts(&d, &b).unwrap();
        for i in 1..run.ell {
            assert!((exact[i - 1] as f64) < run.thresholds[i - 1]);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn noise_scale_dominates_every_record(v in 0u64..=1_280_000_000) {
            let b = fig2();
            let r = Record::scalar(v);
            let i = b.domain_of(&r).unwrap();
            let e = b.evaluate(&r).unwrap();
            prop_assert!(1.0 / b.partition().floor(i) >= 1.0 / e);
        }

        #[test]
        fn exact_counts_partition_the_dataset(values in proptest::collection::vec(0u64..=1_280_000_000, 0..200)) {
            let b = fig2();
            let n = values.len() as u64;
            let d = Dataset::from_values(values, b.bound()).unwrap();
            prop_assert_eq!(exact_domain_counts(&d, &b).unwrap().iter().sum::<u64>(), n);
        }
    }
}
