//! Dyadic partition of the budget range `[eps_min, eps_max]` into
//! privacy-specified domains.
//!
//! Domain 1 is `[eps_min, 2 eps_min]`; domain `i >= 2` is
//! `(2^(i-1) eps_min, min(2^i eps_min, eps_max)]`. Indices are 1-based
//! throughout the public API.

use serde::Serialize;

use crate::error::{PrdpError, Result};

/// Relative tolerance used to snap budgets onto dyadic boundaries.
pub const BOUNDARY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DomainPartition {
    eps_min: f64,
    eps_max: f64,
    count: usize,
}

/// `2^k` as an exact f64.
pub(crate) fn pow2(k: usize) -> f64 {
    f64::powi(2.0, k as i32)
}

/// Nearest integer `k` with `ratio ~= 2^k`, when `ratio` lies within
/// [`BOUNDARY_TOLERANCE`] of that power of two.
fn dyadic_exponent(ratio: f64) -> Option<i64> {
    let k = ratio.log2().round();
    let rel = ratio / f64::powi(2.0, k as i32) - 1.0;
    (rel.abs() <= BOUNDARY_TOLERANCE).then_some(k as i64)
}

/// `ceil(log2(eps_max / eps_min))`, robust against boundary rounding.
pub fn domain_count(eps_min: f64, eps_max: f64) -> Result<usize> {
    if !(eps_min > 0.0 && eps_min.is_finite() && eps_max.is_finite()) || eps_max <= eps_min {
        return Err(PrdpError::DegeneratePartition { eps_min, eps_max });
    }
    let ratio = eps_max / eps_min;
    let l = match dyadic_exponent(ratio) {
        Some(k) => k,
        None => ratio.log2().ceil() as i64,
    };
    Ok(l.max(1) as usize)
}

impl DomainPartition {
    pub fn new(eps_min: f64, eps_max: f64) -> Result<Self> {
        let count = domain_count(eps_min, eps_max)?;
        Ok(DomainPartition {
            eps_min,
            eps_max,
            count,
        })
    }

    pub fn eps_min(&self) -> f64 {
        self.eps_min
    }

    pub fn eps_max(&self) -> f64 {
        self.eps_max
    }

    /// Number of domains `L`.
    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Smallest budget any record of domain `i` can carry: `2^(i-1) eps_min`.
    pub fn floor(&self, i: usize) -> f64 {
        debug_assert!(i >= 1 && i <= self.count);
        self.eps_min * pow2(i - 1)
    }

    /// Closed upper end of domain `i`.
    pub fn upper(&self, i: usize) -> f64 {
        if i >= self.count {
            self.eps_max
        } else {
            (self.eps_min * pow2(i)).min(self.eps_max)
        }
    }

    /// Domain containing budget `eps`.
    ///
    /// A budget equal to `2^i eps_min` belongs to domain `i`. Budgets within
    /// a relative `1e-12` of a dyadic boundary snap onto it, which can only
    /// move them to the domain whose floor is below them.
    pub fn index_of(&self, eps: f64) -> Result<usize> {
        let lo = self.eps_min * (1.0 - BOUNDARY_TOLERANCE);
        let hi = self.eps_max * (1.0 + BOUNDARY_TOLERANCE);
        if !(eps >= lo && eps <= hi) {
            return Err(PrdpError::BudgetOutOfRange(eps));
        }
        let ratio = eps / self.eps_min;
        if ratio <= 2.0 {
            return Ok(1);
        }
        let i = match dyadic_exponent(ratio) {
            Some(k) => k,
            None => ratio.log2().ceil() as i64,
        };
        Ok((i.max(1) as usize).min(self.count))
    }

    /// Every domain's floor, in order.
    pub fn floors(&self) -> Vec<f64> {
        (1..=self.count).map(|i| self.floor(i)).collect()
    }

    /// Partition of the budget function scaled by `factor` (used for the
    /// halved budget `E/2`). The domain count is unchanged.
    pub fn scaled(&self, factor: f64) -> Self {
        DomainPartition {
            eps_min: self.eps_min * factor,
            eps_max: self.eps_max * factor,
            count: self.count,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const FIG_EPS_MIN: f64 = 7.8125e-6;
    const FIG_EPS_MAX: f64 = 4.096;

    #[test]
    fn worked_partition_has_nineteen_domains() {
        assert_eq!(domain_count(FIG_EPS_MIN, FIG_EPS_MAX).unwrap(), 19);
    }

    #[test]
    fn small_ratios() {
        assert_eq!(domain_count(1.0, 2.0).unwrap(), 1);
        assert_eq!(domain_count(1.0, 3.0).unwrap(), 2);
        assert_eq!(domain_count(0.1, 0.4).unwrap(), 2);
        assert_eq!(domain_count(1.0, 1.5).unwrap(), 1);
    }

    #[test]
    fn degenerate_ranges_rejected() {
        assert!(domain_count(1.0, 1.0).is_err());
        assert!(domain_count(2.0, 1.0).is_err());
        assert!(domain_count(0.0, 1.0).is_err());
    }

    #[test]
    fn index_boundaries() {
        let p = DomainPartition::new(FIG_EPS_MIN, FIG_EPS_MAX).unwrap();
        assert_eq!(p.index_of(0.004).unwrap(), 9);
        assert_eq!(p.index_of(0.0040001).unwrap(), 10);
        assert_eq!(p.index_of(FIG_EPS_MIN).unwrap(), 1);
        assert_eq!(p.index_of(2.0 * FIG_EPS_MIN).unwrap(), 1);
        assert_eq!(p.index_of(FIG_EPS_MAX).unwrap(), 19);
        assert!(p.index_of(FIG_EPS_MIN / 2.0).is_err());
        assert!(p.index_of(5.0).is_err());
        assert!(p.index_of(f64::NAN).is_err());
    }

    #[test]
    fn clipped_last_interval() {
        let p = DomainPartition::new(1.0, 3.0).unwrap();
        assert_eq!(p.len(), 2);
        assert_eq!(p.floor(2), 2.0);
        assert_eq!(p.upper(2), 3.0);
        assert_eq!(p.index_of(3.0).unwrap(), 2);
        assert_eq!(p.index_of(2.5).unwrap(), 2);
    }

    #[test]
    fn floors_double() {
        let p = DomainPartition::new(FIG_EPS_MIN, FIG_EPS_MAX).unwrap();
        let f = p.floors();
        for w in f.windows(2) {
            assert_eq!(w[1], 2.0 * w[0]);
        }
    }

    #[test]
    fn sound_on_a_million_log_uniform_budgets() {
        use rand::{Rng, SeedableRng};
        let p = DomainPartition::new(1e-8, 100.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (lo, hi) = (p.eps_min().ln(), p.eps_max().ln());
        for _ in 0..1_000_000 {
            let eps = rng.random_range(lo..=hi).exp().clamp(p.eps_min(), p.eps_max());
            let i = p.index_of(eps).unwrap();
            // exactly one interval contains eps
            let hits = (1..=p.len())
                .filter(|&j| {
                    let lower_ok = if j == 1 {
                        eps >= p.floor(1)
                    } else {
                        eps > p.floor(j)
                    };
                    lower_ok && eps <= p.upper(j)
                })
                .count();
            assert_eq!(hits, 1, "eps={eps}");
            assert!(p.floor(i) <= eps);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn every_budget_lands_in_exactly_one_domain(
            log_min in -20.0f64..0.0,
            span in 0.1f64..30.0,
            t in 0.0f64..=1.0,
        ) {
            let eps_min = 10f64.powf(log_min);
            let eps_max = eps_min * 2f64.powf(span);
            let p = DomainPartition::new(eps_min, eps_max).unwrap();
            let eps = (eps_min.ln() + t * (eps_max.ln() - eps_min.ln())).exp()
                .clamp(eps_min, eps_max);
            let i = p.index_of(eps).unwrap();
            prop_assert!(i >= 1 && i <= p.len());
            prop_assert!(p.floor(i) <= eps);
            prop_assert!(eps <= p.upper(i) * (1.0 + BOUNDARY_TOLERANCE));
            if i > 1 {
                prop_assert!(eps > p.floor(i) * (1.0 - BOUNDARY_TOLERANCE));
            }
        }
    }
}
