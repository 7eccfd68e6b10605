//! Record-dependent privacy budget functions.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, PrdpError, Result};
use crate::partition::DomainPartition;
use crate::record::Record;

/// Shape of a builtin budget function. All builtins depend only on the
/// primary value `v` and are capped at `eps_max`:
///
/// * `Inverse { alpha }`: `alpha / v`
/// * `Log { c, power }`: `c / ln(v)^power` (`eps_max` for `v <= 1`)
/// * `Sqrt { c }`: `c / sqrt(v)`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BudgetKind {
    Inverse { alpha: f64 },
    Log { c: f64, power: f64 },
    Sqrt { c: f64 },
}

impl BudgetKind {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            BudgetKind::Inverse { alpha } => alpha > 0.0 && alpha.is_finite(),
            BudgetKind::Log { c, power } => c > 0.0 && power > 0.0 && c.is_finite(),
            BudgetKind::Sqrt { c } => c > 0.0 && c.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("non-positive budget parameter in {self:?}")))
        }
    }

    /// Uncapped budget at primary value `v` (infinite where the formula blows up).
    fn raw(&self, v: u64) -> f64 {
        let x = v as f64;
        match *self {
            BudgetKind::Inverse { alpha } => alpha / x,
            BudgetKind::Sqrt { c } => c / x.sqrt(),
            BudgetKind::Log { c, power } => {
                if v <= 1 {
                    f64::INFINITY
                } else {
                    c / x.ln().powf(power)
                }
            }
        }
    }

    /// Real-valued estimate of the largest `v` with `raw(v) >= eps`.
    fn approx_inverse(&self, eps: f64) -> f64 {
        match *self {
            BudgetKind::Inverse { alpha } => alpha / eps,
            BudgetKind::Sqrt { c } => (c / eps).powi(2),
            BudgetKind::Log { c, power } => (c / eps).powf(1.0 / power).exp(),
        }
    }
}

type Evaluator = dyn Fn(&Record) -> f64 + Send + Sync;

#[derive(Clone)]
enum Shape {
    Builtin(BudgetKind),
    Custom(Arc<Evaluator>),
}

/// Budget function `E: [0, U]^d -> [eps_min, eps_max]` together with the
/// domain partition it induces.
///
/// Values are clamped into `[eps_min, eps_max]`; a custom evaluator that
/// strays outside bumps [`BudgetFunction::clamp_count`].
#[derive(Clone)]
pub struct BudgetFunction {
    shape: Shape,
    bound: u64,
    scale: f64,
    partition: DomainPartition,
    clamped: Arc<AtomicU64>,
}

impl fmt::Debug for BudgetFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match &self.shape {
            Shape::Builtin(k) => format!("{k:?}"),
            Shape::Custom(_) => "Custom".to_owned(),
        };
        f.debug_struct("BudgetFunction")
            .field("kind", &kind)
            .field("bound", &self.bound)
            .field("scale", &self.scale)
            .field("partition", &self.partition)
            .finish()
    }
}

impl BudgetFunction {
    /// Builtin budget with `eps_min = E(U)`.
    pub fn builtin(kind: BudgetKind, bound: u64, eps_max: f64) -> Result<Self> {
        kind.validate()?;
        if bound < 1 {
            return Err(invalid("global bound U must be >= 1"));
        }
        if !(eps_max > 0.0 && eps_max.is_finite()) {
            return Err(invalid("eps_max must be positive and finite"));
        }
        let eps_min = kind.raw(bound).min(eps_max);
        if eps_max <= eps_min {
            return Err(PrdpError::DegeneratePartition { eps_min, eps_max });
        }
        Ok(BudgetFunction {
            shape: Shape::Builtin(kind),
            bound,
            scale: 1.0,
            partition: DomainPartition::new(eps_min, eps_max)?,
            clamped: Arc::default(),
        })
    }

    pub fn inverse(alpha: f64, bound: u64, eps_max: f64) -> Result<Self> {
        Self::builtin(BudgetKind::Inverse { alpha }, bound, eps_max)
    }

    pub fn log(c: f64, power: f64, bound: u64, eps_max: f64) -> Result<Self> {
        Self::builtin(BudgetKind::Log { c, power }, bound, eps_max)
    }

    pub fn sqrt(c: f64, bound: u64, eps_max: f64) -> Result<Self> {
        Self::builtin(BudgetKind::Sqrt { c }, bound, eps_max)
    }

    /// Arbitrary evaluator with an explicit budget range.
    pub fn custom<F>(eval: F, eps_min: f64, eps_max: f64, bound: u64) -> Result<Self>
    where
        F: Fn(&Record) -> f64 + Send + Sync + 'static,
    {
        if bound < 1 {
            return Err(invalid("global bound U must be >= 1"));
        }
        Ok(BudgetFunction {
            shape: Shape::Custom(Arc::new(eval)),
            bound,
            scale: 1.0,
            partition: DomainPartition::new(eps_min, eps_max)?,
            clamped: Arc::default(),
        })
    }

    /// `E'(r) = E(r) / 2`, sharing the clamp counter with `self`.
    pub fn halved(&self) -> Self {
        self.scaled(0.5)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        BudgetFunction {
            shape: self.shape.clone(),
            bound: self.bound,
            scale: self.scale * factor,
            partition: self.partition.scaled(factor),
            clamped: Arc::clone(&self.clamped),
        }
    }

    pub fn kind(&self) -> Option<BudgetKind> {
        match self.shape {
            Shape::Builtin(k) => Some(k),
            Shape::Custom(_) => None,
        }
    }

    pub fn is_monotone(&self) -> bool {
        matches!(self.shape, Shape::Builtin(_))
    }

    pub fn bound(&self) -> u64 {
        self.bound
    }

    pub fn eps_min(&self) -> f64 {
        self.partition.eps_min()
    }

    pub fn eps_max(&self) -> f64 {
        self.partition.eps_max()
    }

    pub fn partition(&self) -> &DomainPartition {
        &self.partition
    }

    /// Number of domains `L`.
    pub fn domain_count(&self) -> usize {
        self.partition.len()
    }

    /// How many evaluations were clamped into range so far.
    pub fn clamp_count(&self) -> u64 {
        self.clamped.load(Ordering::Relaxed)
    }

    fn clamp(&self, eps: f64) -> f64 {
        let (lo, hi) = (self.eps_min(), self.eps_max());
        if eps >= lo && eps <= hi {
            eps
        } else {
            self.clamped.fetch_add(1, Ordering::Relaxed);
            if eps > hi {
                hi
            } else {
                lo
            }
        }
    }

    /// Budget of a builtin at primary value `v` (no range checks).
    fn builtin_at(&self, kind: BudgetKind, v: u64) -> f64 {
        let (lo, hi) = (self.eps_min(), self.eps_max());
        (kind.raw(v) * self.scale).clamp(lo, hi)
    }

    /// `E(r)`; errors on attributes outside `[0, U]`.
    pub fn evaluate(&self, r: &Record) -> Result<f64> {
        if let Some(&value) = r.attributes().iter().find(|&&a| a > self.bound) {
            return Err(PrdpError::AttributeOutOfRange {
                value,
                bound: self.bound,
            });
        }
        Ok(self.evaluate_unchecked(r))
    }

    /// `E(r)` for a record already validated against the bound.
    pub fn evaluate_unchecked(&self, r: &Record) -> f64 {
        match &self.shape {
            Shape::Builtin(kind) => self.builtin_at(*kind, r.value()),
            Shape::Custom(f) => self.clamp(f(r) * self.scale),
        }
    }

    /// Budget of a builtin at primary value `v`.
    pub fn evaluate_value(&self, v: u64) -> Result<f64> {
        self.evaluate(&Record::scalar(v))
    }

    /// Domain index (1-based) of record `r`.
    pub fn domain_of(&self, r: &Record) -> Result<usize> {
        self.partition.index_of(self.evaluate(r)?)
    }

    /// Largest primary value `v` in `[0, U]` with `E(v) >= eps`; `None` for
    /// custom budgets or `eps > eps_max`.
    pub fn monotone_inverse(&self, eps: f64) -> Option<u64> {
        let Shape::Builtin(kind) = self.shape else {
            return None;
        };
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // also rejects NaN
        if !(eps <= self.eps_max()) {
            return None;
        }
        if eps <= self.eps_min() {
            return Some(self.bound);
        }
        let guess = kind.approx_inverse(eps / self.scale);
        let mut v = if guess.is_finite() {
            guess.clamp(0.0, self.bound as f64) as u64
        } else {
            self.bound
        };
        let at = |v: u64| self.builtin_at(kind, v);
        while v < self.bound && at(v + 1) >= eps {
            v += 1;
        }
        while v > 0 && at(v) < eps {
            v -= 1;
        }
        Some(v)
    }

    /// Largest primary value whose budget lies in domain `i`, or `None`
    /// when no integer value maps there. Builtins only.
    pub fn max_value_in_domain(&self, i: usize) -> Option<u64> {
        let Shape::Builtin(kind) = self.shape else {
            return None;
        };
        let dom = |v: u64| {
            self.partition
                .index_of(self.builtin_at(kind, v))
                .expect("builtin budgets stay in range")
        };
        let mut v = self.monotone_inverse(self.partition.floor(i))?;
        while v < self.bound && dom(v + 1) >= i {
            v += 1;
        }
        while v > 0 && dom(v) < i {
            v -= 1;
        }
        (dom(v) == i).then_some(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_example_eps_min() {
        let b = BudgetFunction::inverse(1e4, 1_280_000_000, 4.096).unwrap();
        assert_eq!(b.eps_min(), 7.8125e-6);
        assert_eq!(b.domain_count(), 19);
    }

    #[test]
    fn default_experiment_eps_min() {
        let b = BudgetFunction::inverse(1e4, 1_000_000_000_000, 100.0).unwrap();
        assert_eq!(b.eps_min(), 1e-8);
        assert_eq!(b.domain_count(), 34);
    }

    #[test]
    fn inverse_values() {
        let b = BudgetFunction::inverse(1e4, 1_000_000_000_000, 100.0).unwrap();
        assert_eq!(b.evaluate_value(2_500_000).unwrap(), 0.004);
        assert_eq!(b.evaluate_value(5_000_000).unwrap(), 0.002);
        // v_Bal <= alpha / eps_max keeps the cap
        assert_eq!(b.evaluate_value(50).unwrap(), 100.0);
        assert_eq!(b.evaluate_value(0).unwrap(), 100.0);
        assert_eq!(b.evaluate_value(1_000_000_000_000).unwrap(), b.eps_min());
    }

    #[test]
    fn boundary_value_gives_eps_min_for_all_kinds() {
        let u = 1u64 << 20;
        for b in [
            BudgetFunction::inverse(1e4, u, 100.0).unwrap(),
            BudgetFunction::log(500.0, 4.0, u, 100.0).unwrap(),
            BudgetFunction::sqrt(8.0, u, 100.0).unwrap(),
        ] {
            assert_eq!(b.evaluate_value(u).unwrap(), b.eps_min());
        }
    }

    #[test]
    fn out_of_range_record_rejected() {
        let b = BudgetFunction::inverse(1e4, 1000, 100.0).unwrap();
        assert!(b.evaluate_value(1001).is_err());
    }

    #[test]
    fn invalid_parameters() {
        assert!(BudgetFunction::inverse(0.0, 10, 1.0).is_err());
        assert!(BudgetFunction::inverse(-1.0, 10, 1.0).is_err());
        assert!(BudgetFunction::sqrt(1.0, 0, 1.0).is_err());
        // eps_max below E(U) collapses the partition
        assert!(matches!(
            BudgetFunction::inverse(1e4, 100, 50.0),
            Err(PrdpError::DegeneratePartition { .. })
        ));
    }

    #[test]
    fn index_of_interval_example() {
        let b = BudgetFunction::inverse(1e4, 1_280_000_000, 4.096).unwrap();
        let r = Record::scalar(2_500_000);
        assert_eq!(b.domain_of(&r).unwrap(), 9);
    }

    #[test]
    fn custom_budget_is_clamped_and_counted() {
        let b = BudgetFunction::custom(|r| r.value() as f64, 1.0, 8.0, 100).unwrap();
        assert_eq!(b.evaluate_value(0).unwrap(), 1.0);
        assert_eq!(b.evaluate_value(50).unwrap(), 8.0);
        assert_eq!(b.evaluate_value(4).unwrap(), 4.0);
        assert_eq!(b.clamp_count(), 2);
        assert!(b.monotone_inverse(2.0).is_none());
    }

    #[test]
    fn halved_budget_preserves_domains() {
        let b = BudgetFunction::inverse(1e4, 1_000_000_000_000, 100.0).unwrap();
        let h = b.halved();
        assert_eq!(h.eps_min(), b.eps_min() / 2.0);
        assert_eq!(h.domain_count(), b.domain_count());
        for v in [1u64, 77, 12_345, 250_000, 3_000_000_000, 1_000_000_000_000] {
            let r = Record::scalar(v);
            assert_eq!(h.evaluate(&r).unwrap(), b.evaluate(&r).unwrap() / 2.0);
            assert_eq!(h.domain_of(&r).unwrap(), b.domain_of(&r).unwrap());
        }
        assert_eq!(h.monotone_inverse(0.001), b.monotone_inverse(0.002));
    }

    #[test]
    fn exhaustive_clamping_small_domain() {
        let u = 5000;
        for b in [
            BudgetFunction::inverse(50.0, u, 10.0).unwrap(),
            BudgetFunction::log(3.0, 4.0, u, 10.0).unwrap(),
            BudgetFunction::sqrt(2.0, u, 10.0).unwrap(),
        ] {
            let mut prev = f64::INFINITY;
            for v in 0..=u {
                let e = b.evaluate_value(v).unwrap();
                assert!(e >= b.eps_min() && e <= b.eps_max());
                assert!(e <= prev, "not non-increasing at {v}");
                prev = e;
            }
        }
    }

    fn builtins(u: u64) -> Vec<BudgetFunction> {
        vec![
            BudgetFunction::inverse(1e4, u, 100.0).unwrap(),
            BudgetFunction::log(500.0, 4.0, u, 100.0).unwrap(),
            BudgetFunction::sqrt(8.0, u, 100.0).unwrap(),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn clamping_holds_on_large_domains(v in 0u64..=1_000_000_000_000) {
            for b in builtins(1_000_000_000_000) {
                let e = b.evaluate_value(v).unwrap();
                prop_assert!(e >= b.eps_min() && e <= b.eps_max());
            }
        }

        #[test]
        fn monotone_inverse_round_trips(t in 0.0f64..=1.0) {
            for b in builtins(1_000_000_000_000) {
                let eps = (b.eps_min().ln() + t * (b.eps_max().ln() - b.eps_min().ln())).exp()
                    .clamp(b.eps_min(), b.eps_max());
                let v = b.monotone_inverse(eps).unwrap();
                prop_assert!(b.evaluate_value(v).unwrap() >= eps);
                if v < b.bound() {
                    prop_assert!(b.evaluate_value(v + 1).unwrap() < eps);
                }
            }
        }
    }
}
