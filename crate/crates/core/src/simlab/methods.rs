use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::adasplit;
use crate::data::{AdaSplitConfig, Dataset, FoldState, Phase, SubgroupPartition};
use crate::error::{Error, Result};
use crate::multtest::{closed_testing, GlobalTest};
use crate::nuisance::{fit_mu, fit_rlearner_ols};
use crate::randtest::{mc_pvalue, TestStatisticSpec};
use crate::regress::LeastSquares;
use crate::report::AnalysisReport;
use crate::rng::{tags, CounterRng};

/// The three compared procedures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    /// Difference-in-means randomization test on whole subgroups.
    #[serde(rename = "RT")]
    Rt,
    /// AIPW test after a uniformly random split.
    #[serde(rename = "RT_RandomSplit")]
    RtRandomSplit,
    /// AIPW test after adaptive splitting.
    #[serde(rename = "RT_AdaSplit")]
    RtAdaSplit,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Rt, Method::RtRandomSplit, Method::RtAdaSplit];

    pub fn label(self) -> &'static str {
        match self {
            Method::Rt => "RT",
            Method::RtRandomSplit => "RT_RandomSplit",
            Method::RtAdaSplit => "RT_AdaSplit",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_', ' '], "").as_str() {
            "rt" => Ok(Method::Rt),
            "rtrandomsplit" | "randomsplit" => Ok(Method::RtRandomSplit),
            "rtadasplit" | "adasplit" => Ok(Method::RtAdaSplit),
            _ => Err(Error::InvalidConfig(format!(
                "unknown method `{s}` (expected rt, random_split or adasplit)"
            ))),
        }
    }
}

/// Runs `method` on one dataset.
pub fn run_method(
    method: Method,
    dataset: &Dataset,
    partition: &SubgroupPartition,
    config: &AdaSplitConfig,
) -> Result<AnalysisReport> {
    match method {
        Method::Rt => run_rt(dataset, partition, config),
        Method::RtRandomSplit => run_random_split(dataset, partition, config),
        Method::RtAdaSplit => {
            let mut report = adasplit::run(dataset, partition, config)?;
            report.method = method.label().into();
            Ok(report)
        }
    }
}

fn finish(
    method: Method,
    tests: Vec<crate::randtest::PValue>,
    folds: Option<FoldState>,
    cate: Option<Vec<f64>>,
    config: &AdaSplitConfig,
) -> Result<AnalysisReport> {
    let pvalues: Vec<f64> = tests.iter().map(|p| p.value).collect();
    let rejected = closed_testing(&pvalues, config.q, GlobalTest::Fisher)?;
    Ok(AnalysisReport {
        method: method.label().into(),
        pvalues,
        tests,
        rejected,
        folds,
        proportions_before_pruning: None,
        iterations: 0,
        stop_reason: None,
        cate_coefficients: cate.clone(),
        rlearner_coefficients: cate,
        noise_variance: None,
        diagnostics: Vec::new(),
        trace: Vec::new(),
        config: config.clone(),
    })
}

fn run_rt(
    dataset: &Dataset,
    partition: &SubgroupPartition,
    config: &AdaSplitConfig,
) -> Result<AnalysisReport> {
    config.validate()?;
    dataset.enter_phase(Phase::Inference);
    let spec = TestStatisticSpec::DifferenceInMeans;
    let tests = (0..partition.k())
        .map(|k| {
            mc_pvalue(
                &spec,
                dataset,
                partition.group(k),
                k,
                config.mc_draws,
                config.seed,
            )
        })
        .collect();
    finish(Method::Rt, tests, None, None, config)
}

/// Splits every subgroup uniformly at random, `⌊ρ·|S_k|⌉` units to the
/// nuisance fold.
pub fn random_split(partition: &SubgroupPartition, rho: f64, seed: u64) -> FoldState {
    let mut folds = FoldState::all_inference(partition);
    for k in 0..partition.k() {
        let mut members = partition.group(k).to_vec();
        let mut rng = CounterRng::from_path(seed, &[tags::RANDOM_SPLIT, k as u64]);
        members.shuffle(&mut rng);
        let m = (rho * members.len() as f64).round() as usize;
        for &i in &members[..m.min(members.len())] {
            folds.move_to_nuisance(i);
        }
    }
    folds
}

fn run_random_split(
    dataset: &Dataset,
    partition: &SubgroupPartition,
    config: &AdaSplitConfig,
) -> Result<AnalysisReport> {
    config.validate()?;
    dataset.enter_phase(Phase::Selection);
    let folds = random_split(partition, config.rho, config.seed);
    let mu = fit_mu(
        &LeastSquares {
            ridge: config.ridge_lambda,
        },
        dataset,
    )?;
    let mu_hat: Vec<f64> = dataset.x().rows_iter().map(|r| mu.predict_row(r)).collect();
    let tau = fit_rlearner_ols(dataset, folds.nuisance(), &mu_hat, config.ridge_lambda)?;
    dataset.enter_phase(Phase::Inference);
    let spec = TestStatisticSpec::Aipw {
        mu_hat,
        tau: tau.clone(),
    };
    let tests = (0..partition.k())
        .map(|k| {
            mc_pvalue(
                &spec,
                dataset,
                folds.inference(k),
                k,
                config.mc_draws,
                config.seed,
            )
        })
        .collect();
    finish(
        Method::RtRandomSplit,
        tests,
        Some(folds),
        Some(tau.coefficients().to_vec()),
        config,
    )
}
