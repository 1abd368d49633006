//! Synthetic scenarios, the compared methods and the experiment runners
//! behind the result tables.

pub mod methods;
pub mod scenario;
pub mod tables;

pub use methods::{random_split, run_method, Method};
pub use scenario::{generate, Affine, CovariateSpec, Scenario, TrueNuisances, SCENARIOS};
pub use tables::{reproduce_table, simulate, ExperimentSummary, RawValue, Replication, SummaryCell};
