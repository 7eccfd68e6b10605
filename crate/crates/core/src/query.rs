use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, PrdpError};
use crate::record::{Dataset, Record};

/// Queries supported by the mechanisms and the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Query {
    Count,
    Sum,
    Max,
    Distinct,
}

impl Query {
    pub const ALL: [Query; 4] = [Query::Count, Query::Sum, Query::Max, Query::Distinct];

    /// Exact (non-private) answer. Max of an empty dataset is 0.
    pub fn evaluate(&self, data: &Dataset) -> f64 {
        self.evaluate_records(data.records())
    }

    pub fn evaluate_records(&self, records: &[Record]) -> f64 {
        match self {
            Query::Count => records.len() as f64,
            Query::Sum => records.iter().map(|r| r.value() as u128).sum::<u128>() as f64,
            Query::Max => records.iter().map(Record::value).max().unwrap_or(0) as f64,
            Query::Distinct => records
                .iter()
                .map(distinct_key)
                .collect::<HashSet<_>>()
                .len() as f64,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Query::Count => "count",
            Query::Sum => "sum",
            Query::Max => "max",
            Query::Distinct => "distinct",
        }
    }
}

/// Key counted by the distinct query: the categorical attribute when
/// present, otherwise the primary value.
pub fn distinct_key(r: &Record) -> u64 {
    r.key().unwrap_or_else(|| r.value())
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Query {
    type Err = PrdpError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "count" => Ok(Query::Count),
            "sum" => Ok(Query::Sum),
            "max" => Ok(Query::Max),
            "distinct" => Ok(Query::Distinct),
            other => Err(invalid(format!("unknown query `{other}`"))),
        }
    }
}
