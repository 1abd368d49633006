use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::methods::{run_method, Method};
use super::scenario::{generate, Scenario};
use crate::data::{AdaSplitConfig, Dataset};
use crate::error::{Error, Result};
use crate::nuisance::{fit_mu, fit_rlearner_ols};
use crate::regress::{LeastSquares, LinearModel};
use crate::report::AnalysisReport;
use crate::rng::{derive_key, key_for, tags, CounterRng};

pub const MIN_REPS: usize = 10;
pub const HOLDOUT_SIZE: usize = 10_000;

/// One aggregated cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryCell {
    pub scenario: String,
    pub method: String,
    /// `G1..GK` or `aggregate`.
    pub subgroup: String,
    pub metric: String,
    pub mean: f64,
    pub se: f64,
    pub reps: usize,
}

/// One per-replication value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawValue {
    pub scenario: String,
    pub method: String,
    pub subgroup: String,
    pub metric: String,
    pub replication: usize,
    pub value: f64,
}

/// Aggregated results of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub table: Option<u8>,
    pub title: String,
    pub reps: usize,
    pub seed: u64,
    pub cells: Vec<SummaryCell>,
    pub raw: Vec<RawValue>,
}

/// Mean and `sd/√n` of a sample.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn aggregate(raw: &[RawValue]) -> Vec<SummaryCell> {
    let mut groups: BTreeMap<(String, String, String, String), Vec<f64>> = BTreeMap::new();
    let mut order = Vec::new();
    for r in raw {
        let key = (
            r.scenario.clone(),
            r.method.clone(),
            r.subgroup.clone(),
            r.metric.clone(),
        );
        let entry = groups.entry(key.clone()).or_default();
        if entry.is_empty() {
            order.push(key);
        }
        entry.push(r.value);
    }
    order
        .into_iter()
        .map(|key| {
            let values = &groups[&key];
            let (mean, se) = mean_se(values);
            SummaryCell {
                scenario: key.0,
                method: key.1,
                subgroup: key.2,
                metric: key.3,
                mean,
                se,
                reps: values.len(),
            }
        })
        .collect()
}

/// Seed of replication `r`.
pub fn replication_seed(seed: u64, r: usize) -> u64 {
    key_for(seed, &[tags::REPLICATION, r as u64])
}

/// Configuration of replication `r`: the p-value stream is tied to the
/// replication seed.
pub fn replication_config(base: &AdaSplitConfig, rep_seed: u64) -> AdaSplitConfig {
    AdaSplitConfig {
        seed: derive_key(rep_seed, tags::METHOD),
        ..base.clone()
    }
}

/// Results of every method on one replication.
#[derive(Debug, Clone)]
pub struct Replication {
    pub index: usize,
    pub dataset: Dataset,
    pub reports: Vec<AnalysisReport>,
}

/// Runs `methods` on `reps` independent draws of `scenario`, in parallel.
pub fn run_replications(
    scenario: &Scenario,
    methods: &[Method],
    reps: usize,
    seed: u64,
    config: &AdaSplitConfig,
) -> Result<Vec<Replication>> {
    (0..reps)
        .into_par_iter()
        .map(|r| {
            let rep_seed = replication_seed(seed, r);
            let (dataset, partition, _) = generate(scenario, rep_seed)?;
            let cfg = replication_config(config, rep_seed);
            let reports = methods
                .iter()
                .map(|&m| run_method(m, &dataset, &partition, &cfg))
                .collect::<Result<Vec<_>>>()?;
            Ok(Replication {
                index: r,
                dataset,
                reports,
            })
        })
        .collect()
}

fn group_label(k: usize) -> String {
    format!("G{}", k + 1)
}

/// Out-of-sample `R²` of `model` against the scenario's CATE.
pub fn holdout_r2(scenario: &Scenario, model: &LinearModel, rep_seed: u64) -> f64 {
    let mut rng = CounterRng::from_path(rep_seed, &[tags::HOLDOUT]);
    let x = scenario.sample_covariates(HOLDOUT_SIZE, &mut rng);
    let truth: Vec<f64> = x.rows_iter().map(|r| scenario.tau.eval(r)).collect();
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for (row, t) in x.rows_iter().zip(&truth) {
        ss_res += (t - model.predict_row(row)).powi(2);
        ss_tot += (t - mean).powi(2);
    }
    1.0 - ss_res / ss_tot
}

fn table1(reps: usize, seed: u64, config: &AdaSplitConfig) -> Result<Vec<RawValue>> {
    let mut raw = Vec::new();
    for name in ["default", "larger_n", "high_noise"] {
        let scenario = Scenario::named(name)?;
        let rows: Vec<Vec<RawValue>> = (0..reps)
            .into_par_iter()
            .map(|r| {
                let rep_seed = replication_seed(seed, r);
                let (ds, partition, _) = generate(&scenario, rep_seed)?;
                let cfg = replication_config(config, rep_seed);
                let report = run_method(Method::RtAdaSplit, &ds, &partition, &cfg)?;
                let bar = LinearModel::new(report.cate_coefficients.clone().unwrap_or_default());
                let mu = fit_mu(
                    &LeastSquares {
                        ridge: cfg.ridge_lambda,
                    },
                    &ds,
                )?;
                let mu_hat: Vec<f64> = ds.x().rows_iter().map(|x| mu.predict_row(x)).collect();
                let folds = report.folds.as_ref().expect("adaptive split has folds");
                let weighted =
                    LinearModel::new(report.rlearner_coefficients.clone().unwrap_or_default());
                let unweighted =
                    fit_rlearner_ols(&ds, folds.nuisance(), &mu_hat, cfg.ridge_lambda)?;
                let value = |method: &str, v: f64| RawValue {
                    scenario: name.into(),
                    method: method.into(),
                    subgroup: "aggregate".into(),
                    metric: "r2".into(),
                    replication: r,
                    value: v,
                };
                Ok(vec![
                    value("R-learner", holdout_r2(&scenario, &weighted, rep_seed)),
                    value(
                        "R-learner (unweighted)",
                        holdout_r2(&scenario, &unweighted, rep_seed),
                    ),
                    value("BaR-learner", holdout_r2(&scenario, &bar, rep_seed)),
                ])
            })
            .collect::<Result<_>>()?;
        raw.extend(rows.into_iter().flatten());
    }
    Ok(raw)
}

/// Per-replication values for the testing tables.
pub fn testing_values(
    scenario: &Scenario,
    reps: &[Replication],
    config: &AdaSplitConfig,
) -> Vec<RawValue> {
    let mut raw = Vec::new();
    // every subgroup is non-null unless τ ≡ 0, so any rejection is a false
    // one in the null scenario and a true one otherwise
    let null = scenario.tau.coefficients().iter().all(|&c| c == 0.0);
    let (any_label, fraction_label) = if null {
        ("fwer", "fraction_rejected")
    } else {
        ("any_rejection", "power")
    };
    for rep in reps {
        for report in &rep.reports {
            let push = |raw: &mut Vec<RawValue>, subgroup: String, metric: &str, value: f64| {
                raw.push(RawValue {
                    scenario: scenario.name.clone(),
                    method: report.method.clone(),
                    subgroup,
                    metric: metric.into(),
                    replication: rep.index,
                    value,
                })
            };
            for (k, &p) in report.pvalues.iter().enumerate() {
                push(
                    &mut raw,
                    group_label(k),
                    "rejection_rate",
                    f64::from(u8::from(p <= config.alpha)),
                );
            }
            let k = report.pvalues.len().max(1) as f64;
            push(
                &mut raw,
                "aggregate".into(),
                any_label,
                f64::from(u8::from(!report.rejected.is_empty())),
            );
            push(
                &mut raw,
                "aggregate".into(),
                fraction_label,
                report.rejected.rejected.len() as f64 / k,
            );
        }
    }
    raw
}

/// Runs the protocol behind one of the four result tables.
pub fn reproduce_table(
    table: u8,
    reps: usize,
    seed: u64,
    config: &AdaSplitConfig,
) -> Result<ExperimentSummary> {
    if reps < MIN_REPS {
        return Err(Error::InvalidConfig(format!("reps ≥ {MIN_REPS} required")));
    }
    config.validate()?;
    let (title, raw) = match table {
        1 => ("Out-of-sample R² of CATE estimators", table1(reps, seed, config)?),
        2 | 3 => {
            let scenario = Scenario::named("null")?;
            let runs = run_replications(&scenario, &Method::ALL, reps, seed, config)?;
            let mut raw = testing_values(&scenario, &runs, config);
            let (title, keep) = if table == 2 {
                ("Type I error per subgroup", "rejection_rate")
            } else {
                ("Family-wise error rate", "fwer")
            };
            raw.retain(|r| r.metric == keep);
            (title, raw)
        }
        4 => {
            let mut raw = Vec::new();
            for name in ["default", "larger_n", "high_noise"] {
                let scenario = Scenario::named(name)?;
                let runs = run_replications(&scenario, &Method::ALL, reps, seed, config)?;
                raw.extend(
                    testing_values(&scenario, &runs, config)
                        .into_iter()
                        .filter(|r| r.metric == "power" || r.metric == "any_rejection"),
                );
            }
            ("Power of closed testing", raw)
        }
        other => {
            return Err(Error::InvalidConfig(format!(
                "table must be 1, 2, 3 or 4 (got {other})"
            )))
        }
    };
    Ok(ExperimentSummary {
        table: Some(table),
        title: title.into(),
        reps,
        seed,
        cells: aggregate(&raw),
        raw,
    })
}

/// All testing metrics for every method on one scenario.
pub fn simulate(
    scenario: &Scenario,
    reps: usize,
    seed: u64,
    config: &AdaSplitConfig,
) -> Result<(Vec<Replication>, ExperimentSummary)> {
    config.validate()?;
    let runs = run_replications(scenario, &Method::ALL, reps, seed, config)?;
    let raw = testing_values(scenario, &runs, config);
    let summary = ExperimentSummary {
        table: None,
        title: format!("Scenario {}", scenario.name),
        reps,
        seed,
        cells: aggregate(&raw),
        raw,
    };
    Ok((runs, summary))
}

fn io_err(e: impl std::fmt::Display) -> Error {
    Error::Csv(e.to_string())
}

impl ExperimentSummary {
    /// Cell lookup.
    pub fn cell(&self, scenario: &str, method: &str, subgroup: &str, metric: &str) -> Option<&SummaryCell> {
        self.cells.iter().find(|c| {
            c.scenario == scenario && c.method == method && c.subgroup == subgroup && c.metric == metric
        })
    }

    /// Summary CSV: `scenario,method,subgroup,metric,mean,se,reps`.
    pub fn write_summary_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for c in &self.cells {
            w.serialize(c).map_err(io_err)?;
        }
        w.flush().map_err(io_err)
    }

    /// Raw per-replication CSV.
    pub fn write_raw_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.raw {
            w.serialize(r).map_err(io_err)?;
        }
        w.flush().map_err(io_err)
    }

    /// Plain-text grid of `mean (se)` cells, methods as rows.
    pub fn render_text(&self) -> String {
        let decimals = if self.table == Some(1) { 2 } else { 3 };
        let mut metrics: Vec<&str> = Vec::new();
        for c in &self.cells {
            if !metrics.contains(&c.metric.as_str()) {
                metrics.push(&c.metric);
            }
        }
        let mut out = format!("{} ({} replications)\n", self.title, self.reps);
        for metric in metrics {
            let cells: Vec<&SummaryCell> = self.cells.iter().filter(|c| c.metric == metric).collect();
            let by_subgroup = cells.iter().any(|c| c.subgroup != "aggregate");
            let column = |c: &SummaryCell| {
                if by_subgroup {
                    c.subgroup.clone()
                } else {
                    c.scenario.clone()
                }
            };
            let mut columns: Vec<String> = Vec::new();
            let mut rows: Vec<String> = Vec::new();
            for c in &cells {
                let col = column(c);
                if !columns.contains(&col) {
                    columns.push(col);
                }
                if !rows.contains(&c.method) {
                    rows.push(c.method.clone());
                }
            }
            let width = 16usize;
            let label = rows.iter().map(String::len).max().unwrap_or(0).max(6) + 2;
            let _ = writeln!(out, "\n[{metric}]");
            let _ = write!(out, "{:<label$}", "method");
            for col in &columns {
                let _ = write!(out, "{col:>width$}");
            }
            out.push('\n');
            for row in &rows {
                let _ = write!(out, "{row:<label$}");
                for col in &columns {
                    let text = cells
                        .iter()
                        .find(|c| &c.method == row && &column(c) == col)
                        .map_or("-".to_string(), |c| {
                            format!("{:.decimals$} ({:.decimals$})", c.mean, c.se)
                        });
                    let _ = write!(out, "{text:>width$}");
                }
                out.push('\n');
            }
        }
        out
    }
}
