//! The adaptive sample-splitting engine.
//!
//! Units start in the inference folds except for a small, covariate-only
//! initial nuisance fold. Each iteration moves the unit whose assignment is
//! least useful for testing (negative estimated effect first, then low
//! certainty) into the nuisance fold, reveals its assignment and refits the
//! nuisance models, until the CATE fit stabilizes or every subgroup has
//! reached its minimum inference proportion. Assignments of the final
//! inference folds are read only when p-values are computed.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{AdaSplitConfig, Dataset, FoldState, Phase, SubgroupPartition};
use crate::error::{Error, Result};
use crate::multtest::{closed_testing, GlobalTest};
use crate::nuisance::{
    certainty, estimate_noise_var, fit_bar_learner, fit_mu, fit_rlearner_weighted, posterior_e,
    NeighborIndex, NuisanceModel, SelectionModel,
};
use crate::randtest::{mc_pvalue, TestStatisticSpec};
use crate::regress::{diversity_scores, LeastSquares, LinearModel, Predictor, Regressor};
use crate::report::AnalysisReport;

/// One selection step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub t: usize,
    pub selected: usize,
    pub subgroup: usize,
    pub criterion: f64,
    /// Convergence metric, when nuisances were refit at this step.
    pub loss: Option<f64>,
    pub proportions: Vec<f64>,
}

/// Why the selection loop ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    NoEligibleSubgroup,
}

fn initial_count(p_init: f64, size: usize) -> usize {
    ((p_init * size as f64) - 1e-9).ceil().max(1.0) as usize
}

/// Initial fold: from every subgroup, the `⌈p·|S_k|⌉` units with the largest
/// diversity scores (ties by lowest index) form the nuisance fold.
pub fn split_init(
    dataset: &Dataset,
    partition: &SubgroupPartition,
    p_init: f64,
    ridge: f64,
) -> Result<FoldState> {
    if !(p_init > 0.0 && p_init < 1.0) {
        return Err(Error::InvalidConfig("p_init must lie in (0,1)".into()));
    }
    let scores = diversity_scores(dataset.x(), ridge)?;
    let mut folds = FoldState::all_inference(partition);
    for k in 0..partition.k() {
        let group = partition.group(k);
        if group.is_empty() {
            return Err(Error::EmptySubgroup { group: k });
        }
        let m = initial_count(p_init, group.len());
        if m >= group.len() {
            return Err(Error::InitialProportionTooLarge { group: k });
        }
        let mut ranked = group.to_vec();
        ranked.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        for &i in &ranked[..m] {
            folds.move_to_nuisance(i);
        }
    }
    Ok(folds)
}

/// `sign(τ̂(x))·|2ê − 1|`, with `sign(0) = 0`.
#[inline]
pub fn selection_criterion(tau_x: f64, e_hat: f64) -> f64 {
    let s = if tau_x > 0.0 {
        1.0
    } else if tau_x < 0.0 {
        -1.0
    } else {
        0.0
    };
    s * certainty(e_hat)
}

/// `1 − R²` of new predictions against old ones treated as ground truth.
///
/// Constant old predictions give `0` when the two agree within `1e-12` and
/// `+∞` otherwise.
pub fn convergence_metric(tau_new: &[f64], tau_old: &[f64]) -> Result<f64> {
    if tau_old.len() < 2 || tau_new.len() != tau_old.len() {
        return Err(Error::TooFewInferenceUnits);
    }
    let mean = tau_old.iter().sum::<f64>() / tau_old.len() as f64;
    let ss_tot: f64 = tau_old.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = tau_new
        .iter()
        .zip(tau_old)
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    if ss_tot == 0.0 {
        let agree = tau_new.iter().zip(tau_old).all(|(a, b)| (a - b).abs() <= 1e-12);
        return Ok(if agree { 0.0 } else { f64::INFINITY });
    }
    Ok(ss_res / ss_tot)
}

struct Engine<'a> {
    ds: &'a Dataset,
    cfg: &'a AdaSplitConfig,
    mu_hat: Vec<f64>,
    index: Arc<NeighborIndex>,
    folds: FoldState,
}

impl Engine<'_> {
    /// Posterior built from the (optionally selection-weighted) R-learner on
    /// the current nuisance fold.
    fn posterior(&self, weighted: bool) -> Result<(NuisanceModel, Vec<f64>)> {
        let fold = self.folds.nuisance();
        // before any outcome-driven selection, the fold is a covariate-only
        // draw with inclusion rate |I|/n
        let p_hat: Vec<f64> = if weighted {
            SelectionModel::from_index(self.index.clone(), self.folds.nuisance_mask())
                .at_units()
                .to_vec()
        } else {
            vec![fold.len() as f64 / self.ds.n() as f64; self.ds.n()]
        };
        let p_hat = Some(p_hat.as_slice());
        let tau = fit_rlearner_weighted(self.ds, fold, &self.mu_hat, p_hat, self.cfg.ridge_lambda)?;
        let nu2 = estimate_noise_var(self.ds, fold, &self.mu_hat, &tau, p_hat);
        let e_hat = (0..self.ds.n())
            .map(|i| {
                posterior_e(
                    self.ds.y()[i] - self.mu_hat[i],
                    tau.predict_row(self.ds.x().row(i)),
                    nu2,
                )
            })
            .collect();
        let model = NuisanceModel {
            mu_hat: Vec::new(),
            tau,
            nu2,
        };
        Ok((model, e_hat))
    }

    fn bar(&self, e_hat: &[f64]) -> Result<LinearModel> {
        fit_bar_learner(
            self.ds,
            self.folds.nuisance_mask(),
            &self.mu_hat,
            e_hat,
            self.cfg.lambda_imputed,
            self.cfg.ridge_lambda,
        )
    }

    fn predictions_on_inference(&self, model: &LinearModel) -> Vec<f64> {
        self.folds
            .inference_all()
            .into_iter()
            .map(|j| model.predict_row(self.ds.x().row(j)))
            .collect()
    }

    fn eligible(&self, k: usize) -> bool {
        let size = self.folds.group_size(k) as f64;
        let remaining = self.folds.inference(k).len();
        remaining >= 1 && (remaining as f64 - 1.0) / size >= self.cfg.rho
    }
}

/// Runs the procedure with affine least squares for the outcome model.
pub fn run(
    dataset: &Dataset,
    partition: &SubgroupPartition,
    config: &AdaSplitConfig,
) -> Result<AnalysisReport> {
    run_with(
        dataset,
        partition,
        config,
        &LeastSquares {
            ridge: config.ridge_lambda,
        },
    )
}

/// Runs the procedure with a caller-supplied outcome regressor.
pub fn run_with<R: Regressor>(
    dataset: &Dataset,
    partition: &SubgroupPartition,
    config: &AdaSplitConfig,
    regressor: &R,
) -> Result<AnalysisReport> {
    config.validate()?;
    if partition.n() != dataset.n() {
        return Err(Error::LengthMismatch {
            what: "partition",
            got: partition.n(),
            expected: dataset.n(),
        });
    }
    if !dataset.is_half_design() {
        return Err(Error::UnsupportedDesign(
            "adaptive splitting requires the Bern(1/2) design".into(),
        ));
    }
    dataset.enter_phase(Phase::Selection);

    let mu = fit_mu(regressor, dataset)?;
    let mu_hat: Vec<f64> = dataset.x().rows_iter().map(|r| mu.predict_row(r)).collect();
    let folds = split_init(dataset, partition, config.p_init, config.ridge_lambda)?;
    let index = Arc::new(NeighborIndex::build(
        dataset.x(),
        dataset.y(),
        config.knn_k.min(dataset.n()),
    )?);
    let mut engine = Engine {
        ds: dataset,
        cfg: config,
        mu_hat,
        index,
        folds,
    };

    // t = 0: uniform inclusion rate over the covariate-chosen fold
    let (initial, mut e_hat) = engine.posterior(false)?;
    let mut tau_prev = initial.tau;

    let mut losses: Vec<f64> = Vec::new();
    let mut trace = Vec::new();
    let mut t = 0usize;
    let stop = loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for k in 0..partition.k() {
            if !engine.eligible(k) {
                continue;
            }
            for &j in engine.folds.inference(k) {
                let c = selection_criterion(tau_prev.predict_row(dataset.x().row(j)), e_hat[j]);
                let better = match best {
                    None => true,
                    Some((bc, bj, _)) => c < bc || (c == bc && j < bj),
                };
                if better {
                    best = Some((c, j, k));
                }
            }
        }
        let Some((criterion, j, k)) = best else {
            break StopReason::NoEligibleSubgroup;
        };
        engine.folds.move_to_nuisance(j);
        t += 1;

        let mut loss = None;
        if t % config.refit_every == 0 {
            let (_, e_new) = engine.posterior(true)?;
            let tau_new = engine.bar(&e_new)?;
            let new_pred = engine.predictions_on_inference(&tau_new);
            let old_pred = engine.predictions_on_inference(&tau_prev);
            let l = if new_pred.len() >= 2 {
                convergence_metric(&new_pred, &old_pred)?
            } else {
                0.0
            };
            losses.push(l);
            loss = Some(l);
            e_hat = e_new;
            tau_prev = tau_new;
        }
        trace.push(IterationTrace {
            t,
            selected: j,
            subgroup: k,
            criterion,
            loss,
            proportions: engine.folds.proportions().to_vec(),
        });
        if losses.len() >= config.n0
            && loss.is_some()
            && losses[losses.len() - config.n0..]
                .iter()
                .all(|&l| l <= config.eps_l)
        {
            break StopReason::Converged;
        }
    };
    let proportions_before_pruning = engine.folds.proportions().to_vec();

    // prune negative estimated effects while keeping π_k ≥ ρ
    for k in 0..partition.k() {
        let mut negatives: Vec<(f64, usize)> = engine
            .folds
            .inference(k)
            .iter()
            .map(|&j| (tau_prev.predict_row(dataset.x().row(j)), j))
            .filter(|&(v, _)| v < 0.0)
            .collect();
        negatives.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (_, j) in negatives {
            if !engine.eligible(k) {
                break;
            }
            engine.folds.move_to_nuisance(j);
        }
    }
    let (final_posterior, e_final) = engine.posterior(true)?;
    let tau_final = engine.bar(&e_final)?;

    dataset.enter_phase(Phase::Inference);
    let spec = TestStatisticSpec::Aipw {
        mu_hat: engine.mu_hat.clone(),
        tau: tau_final.clone(),
    };
    let tests: Vec<_> = (0..partition.k())
        .map(|k| {
            mc_pvalue(
                &spec,
                dataset,
                engine.folds.inference(k),
                k,
                config.mc_draws,
                config.seed,
            )
        })
        .collect();
    let pvalues: Vec<f64> = tests.iter().map(|p| p.value).collect();
    let rejected = closed_testing(&pvalues, config.q, GlobalTest::Fisher)?;
    Ok(AnalysisReport {
        method: "adasplit".into(),
        pvalues,
        tests,
        rejected,
        folds: Some(engine.folds),
        proportions_before_pruning: Some(proportions_before_pruning),
        iterations: t,
        stop_reason: Some(stop),
        cate_coefficients: Some(tau_final.coefficients().to_vec()),
        rlearner_coefficients: Some(final_posterior.tau.coefficients().to_vec()),
        noise_variance: Some(final_posterior.nu2),
        diagnostics: losses,
        trace,
        config: config.clone(),
    })
}
