//! Adaptive sample splitting for randomization tests of subgroup effects.
//!
//! The entry point is [`adasplit::run`], which takes a [`Dataset`] from a
//! Bernoulli(1/2) experiment and a [`SubgroupPartition`], grows a nuisance
//! fold one unit at a time, and returns per-subgroup randomization p-values
//! computed on the untouched inference folds.

pub mod adasplit;
pub mod data;
pub mod error;
pub mod io;
pub mod multtest;
pub mod nuisance;
pub mod randtest;
pub mod regress;
pub mod report;
pub mod rng;
pub mod simlab;
pub mod special;

pub use adasplit::{run, run_with, IterationTrace, StopReason};
pub use data::{
    partition_by_quantiles, validate_dataset, AccessLog, AdaSplitConfig, Dataset, FoldState,
    Matrix, Phase, RawRecords, SubgroupPartition,
};
pub use error::{Error, Result};
pub use multtest::{closed_testing, GlobalTest, RejectionSet};
pub use randtest::{PValue, TestStatisticSpec};
pub use regress::{LeastSquares, LinearModel, Predictor, Regressor};
pub use report::AnalysisReport;
pub use rng::CounterRng;
