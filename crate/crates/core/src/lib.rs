//! Per-record differential privacy.
//!
//! Every record carries its own privacy budget `E(r)`, a public function of
//! its value. Budgets are grouped into dyadic privacy-specified domains; the
//! count algorithm estimates the smallest heavily-populated budget and the
//! framework lifts any standard DP mechanism to run at that budget. The
//! local-model variants run as a simulated two-round protocol.

pub mod budget;
pub mod count;
pub mod data;
pub mod error;
pub mod framework;
pub mod harness;
pub mod mechanisms;
pub mod noise;
pub mod partition;
pub mod prldp;
pub mod query;
pub mod record;
pub mod sum_ext;

pub use budget::{BudgetFunction, BudgetKind};
pub use data::{generate, load_csv, CsvLoad, GeneratorSpec, ValueDistribution};
pub use count::{prdp_count, prdp_count_run, select_and_aggregate, CountRun, Selection};
pub use error::{PrdpError, Result};
pub use harness::{run_experiment, DataSource, ExperimentConfig, ExperimentReport, Method};
pub use framework::{naive_baseline, prdp_framework, prdp_framework_run, FrameworkRun};
pub use mechanisms::{mechanism_by_name, DpMechanism};
pub use noise::{NoiseSource, StreamFamily};
pub use partition::DomainPartition;
pub use prldp::{prldp_analyzer, prldp_count, prldp_framework, prldp_framework_run, prldp_randomizer, LdpMechanism, PrldpRun};
pub use query::Query;
pub use record::{Dataset, Record};
pub use sum_ext::{prdp_sum_extension, prdp_sum_extension_run, SumRun};
