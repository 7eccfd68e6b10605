//! Records and datasets over the integer domain `[0, U]^d`.

use crate::error::{PrdpError, Result};

/// A single record. Attribute 0 is the primary numeric value (e.g. a
/// balance); attribute 1, when present, is a categorical key.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Record {
    attrs: Vec<u64>,
}

impl Record {
    pub fn new(attrs: Vec<u64>) -> Self {
        Record { attrs }
    }

    /// Record with only a primary value.
    pub fn scalar(value: u64) -> Self {
        Record { attrs: vec![value] }
    }

    /// Record with a primary value and a categorical key.
    pub fn keyed(value: u64, key: u64) -> Self {
        Record {
            attrs: vec![value, key],
        }
    }

    pub fn attributes(&self) -> &[u64] {
        &self.attrs
    }

    pub fn dim(&self) -> usize {
        self.attrs.len()
    }

    /// Primary value; 0 for a zero-dimensional record.
    pub fn value(&self) -> u64 {
        self.attrs.first().copied().unwrap_or(0)
    }

    pub fn key(&self) -> Option<u64> {
        self.attrs.get(1).copied()
    }

    pub(crate) fn check(&self, dim: usize, bound: u64) -> Result<()> {
        if self.attrs.len() != dim {
            return Err(PrdpError::DimensionMismatch {
                expected: dim,
                got: self.attrs.len(),
            });
        }
        if let Some(&value) = self.attrs.iter().find(|&&a| a > bound) {
            return Err(PrdpError::AttributeOutOfRange { value, bound });
        }
        Ok(())
    }
}

/// A multiset of records sharing dimensionality `d` and global bound `U`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<Record>,
    dim: usize,
    bound: u64,
}

impl Dataset {
    pub fn new(records: Vec<Record>, dim: usize, bound: u64) -> Result<Self> {
        if bound < 1 {
            return Err(crate::error::invalid("global bound U must be >= 1"));
        }
        for r in &records {
            r.check(dim, bound)?;
        }
        Ok(Dataset {
            records,
            dim,
            bound,
        })
    }

    pub fn empty(dim: usize, bound: u64) -> Result<Self> {
        Self::new(Vec::new(), dim, bound)
    }

    /// One-dimensional dataset from primary values.
    pub fn from_values(values: impl IntoIterator<Item = u64>, bound: u64) -> Result<Self> {
        Self::new(values.into_iter().map(Record::scalar).collect(), 1, bound)
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bound(&self) -> u64 {
        self.bound
    }

    pub fn values(&self) -> impl Iterator<Item = u64> + '_ {
        self.records.iter().map(Record::value)
    }

    /// Subset keeping the records for which `keep` returns true.
    pub fn filter(&self, mut keep: impl FnMut(&Record) -> bool) -> Dataset {
        Dataset {
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
            dim: self.dim,
            bound: self.bound,
        }
    }

    pub fn into_records(self) -> Vec<Record> {
        self.records
    }
}
