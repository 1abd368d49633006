use serde::{Deserialize, Serialize};

use crate::adasplit::{IterationTrace, StopReason};
use crate::data::{AdaSplitConfig, FoldState};
use crate::multtest::RejectionSet;
use crate::randtest::PValue;

/// Outcome of one analysis run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub method: String,
    /// One p-value per subgroup, in subgroup order.
    pub pvalues: Vec<f64>,
    pub tests: Vec<PValue>,
    /// Closed-testing (Fisher) rejections at level `config.q`.
    pub rejected: RejectionSet,
    /// Fold assignment; absent for methods that do not split.
    pub folds: Option<FoldState>,
    /// Inference proportions at the end of selection, before pruning.
    pub proportions_before_pruning: Option<Vec<f64>>,
    pub iterations: usize,
    pub stop_reason: Option<StopReason>,
    /// Final CATE coefficients, intercept first.
    pub cate_coefficients: Option<Vec<f64>>,
    /// Selection-weighted R-learner on the final nuisance fold, the CATE
    /// model behind the final posterior.
    pub rlearner_coefficients: Option<Vec<f64>>,
    pub noise_variance: Option<f64>,
    /// Convergence metric `l_t` after each refit.
    pub diagnostics: Vec<f64>,
    pub trace: Vec<IterationTrace>,
    pub config: AdaSplitConfig,
}

impl AnalysisReport {
    /// Subgroups with p-value at most `alpha`.
    pub fn rejected_at(&self, alpha: f64) -> Vec<usize> {
        (0..self.pvalues.len())
            .filter(|&k| self.pvalues[k] <= alpha)
            .collect()
    }
}
