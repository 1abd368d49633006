//! Domain data model: datasets, subgroup partitions, fold bookkeeping and
//! the analysis configuration.

use std::sync::atomic::{AtomicU8, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major real matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                what: "matrix data",
                got: data.len(),
                expected: rows * cols,
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::LengthMismatch {
                    what: "matrix row",
                    got: r.len(),
                    expected: cols,
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn rows_iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    /// Rows selected by `idx`, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Records as parsed from an external source, before validation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawRecords {
    pub covariate_names: Vec<String>,
    pub covariates: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub e: Option<Vec<f64>>,
}

/// Stage of an analysis, as recorded by an [`AccessLog`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Selection = 0,
    Inference = 1,
}

/// Records every read of a treatment assignment together with the phase in
/// which it happened.
#[derive(Debug, Default)]
pub struct AccessLog {
    phase: AtomicU8,
    reads: Mutex<Vec<(usize, Phase)>>,
}

impl AccessLog {
    pub fn phase(&self) -> Phase {
        match self.phase.load(Ordering::SeqCst) {
            0 => Phase::Selection,
            _ => Phase::Inference,
        }
    }

    fn record(&self, i: usize) {
        let phase = self.phase();
        self.reads.lock().expect("access log poisoned").push((i, phase));
    }

    pub fn reads(&self) -> Vec<(usize, Phase)> {
        self.reads.lock().expect("access log poisoned").clone()
    }

    /// Units whose assignment was read during `phase`.
    pub fn units_read_in(&self, phase: Phase) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .reads()
            .into_iter()
            .filter(|&(_, p)| p == phase)
            .map(|(i, _)| i)
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// A validated experimental dataset.
///
/// All assignment reads go through [`Dataset::assignment`], which reports to
/// an attached [`AccessLog`] when one is installed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dataset {
    covariate_names: Vec<String>,
    x: Matrix,
    y: Vec<f64>,
    z: Vec<u8>,
    e: Vec<f64>,
    #[serde(skip)]
    log: Option<Arc<AccessLog>>,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.covariate_names == other.covariate_names
            && self.x == other.x
            && self.y == other.y
            && self.z == other.z
            && self.e == other.e
    }
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn design_probs(&self) -> &[f64] {
        &self.e
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    /// Observed assignment of unit `i`.
    #[inline]
    pub fn assignment(&self, i: usize) -> u8 {
        if let Some(log) = &self.log {
            log.record(i);
        }
        self.z[i]
    }

    /// Assignments of `idx`, each read logged.
    pub fn assignments_of(&self, idx: &[usize]) -> Vec<u8> {
        idx.iter().map(|&i| self.assignment(i)).collect()
    }

    /// Installs a fresh access log and returns a handle to it.
    pub fn instrument(&mut self) -> Arc<AccessLog> {
        let log = Arc::new(AccessLog::default());
        self.log = Some(log.clone());
        log
    }

    /// Advances the phase reported by an attached access log.
    pub fn enter_phase(&self, phase: Phase) {
        if let Some(log) = &self.log {
            log.phase.store(phase as u8, Ordering::SeqCst);
        }
    }

    /// True when every unit has design probability 1/2.
    pub fn is_half_design(&self) -> bool {
        self.e.iter().all(|&e| e == 0.5)
    }

    /// Convenience constructor that runs full validation.
    pub fn new(x: Matrix, y: Vec<f64>, z: Vec<f64>, e: Option<Vec<f64>>) -> Result<Self> {
        let names = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
        validate_dataset(RawRecords {
            covariate_names: names,
            covariates: x.rows_iter().map(<[f64]>::to_vec).collect(),
            y,
            z,
            e,
        })
    }

    /// Same data with replaced outcomes; used by simulators and tests.
    pub fn with_outcomes(&self, y: Vec<f64>) -> Result<Self> {
        let mut raw = self.to_raw();
        raw.y = y;
        validate_dataset(raw)
    }

    pub fn to_raw(&self) -> RawRecords {
        RawRecords {
            covariate_names: self.covariate_names.clone(),
            covariates: self.x.rows_iter().map(<[f64]>::to_vec).collect(),
            y: self.y.clone(),
            z: (0..self.n()).map(|i| f64::from(self.assignment(i))).collect(),
            e: Some(self.e.clone()),
        }
    }
}

/// Validates parsed records into a [`Dataset`].
pub fn validate_dataset(raw: RawRecords) -> Result<Dataset> {
    let n = raw.y.len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if raw.covariates.len() != n {
        return Err(Error::LengthMismatch {
            what: "covariates",
            got: raw.covariates.len(),
            expected: n,
        });
    }
    if raw.z.len() != n {
        return Err(Error::LengthMismatch {
            what: "z",
            got: raw.z.len(),
            expected: n,
        });
    }
    let d = raw.covariates[0].len();
    if d == 0 {
        return Err(Error::NoCovariates);
    }
    let names = if raw.covariate_names.len() == d {
        raw.covariate_names
    } else {
        (1..=d).map(|j| format!("x{j}")).collect()
    };
    for (i, row) in raw.covariates.iter().enumerate() {
        if row.len() != d {
            return Err(Error::LengthMismatch {
                what: "covariate row",
                got: row.len(),
                expected: d,
            });
        }
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: i,
                column: names[j].clone(),
            });
        }
    }
    if let Some(i) = raw.y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            row: i,
            column: "y".into(),
        });
    }
    let mut z = Vec::with_capacity(n);
    for (i, &v) in raw.z.iter().enumerate() {
        if v == 0.0 {
            z.push(0);
        } else if v == 1.0 {
            z.push(1);
        } else {
            return Err(Error::NonBinaryAssignment { row: i, value: v });
        }
    }
    let e = match raw.e {
        Some(e) => {
            if e.len() != n {
                return Err(Error::LengthMismatch {
                    what: "e",
                    got: e.len(),
                    expected: n,
                });
            }
            if let Some(i) = e.iter().position(|&p| !(p > 0.0 && p < 1.0)) {
                return Err(Error::InvalidDesignProbability { row: i, value: e[i] });
            }
            e
        }
        None => vec![0.5; n],
    };
    let x = Matrix::from_rows(&raw.covariates)?;
    Ok(Dataset {
        covariate_names: names,
        x,
        y: raw.y,
        z,
        e,
        log: None,
    })
}

/// Disjoint, exhaustive subgroups `S_1..S_K` over the units.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubgroupPartition {
    groups: Vec<Vec<usize>>,
    membership: Vec<usize>,
}

impl SubgroupPartition {
    /// Builds a partition from per-unit group labels `0..K`.
    pub fn from_labels(labels: &[usize]) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let k = labels.iter().max().map_or(0, |m| m + 1);
        let mut groups = vec![Vec::new(); k];
        for (i, &g) in labels.iter().enumerate() {
            groups[g].push(i);
        }
        if let Some(g) = groups.iter().position(Vec::is_empty) {
            return Err(Error::EmptySubgroup { group: g });
        }
        Ok(Self {
            groups,
            membership: labels.to_vec(),
        })
    }

    /// Builds a partition from explicit index sets, checking disjointness
    /// and coverage of `0..n`.
    pub fn from_groups(groups: Vec<Vec<usize>>, n: usize) -> Result<Self> {
        let mut membership = vec![usize::MAX; n];
        for (g, members) in groups.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::EmptySubgroup { group: g });
            }
            for &i in members {
                if i >= n {
                    return Err(Error::InvalidPartition(format!("unit {i} out of range")));
                }
                if membership[i] != usize::MAX {
                    return Err(Error::InvalidPartition(format!("unit {i} in two groups")));
                }
                membership[i] = g;
            }
        }
        if let Some(i) = membership.iter().position(|&g| g == usize::MAX) {
            return Err(Error::InvalidPartition(format!("unit {i} not covered")));
        }
        let mut groups = groups;
        for g in &mut groups {
            g.sort_unstable();
        }
        Ok(Self { groups, membership })
    }

    pub fn single(n: usize) -> Self {
        Self {
            groups: vec![(0..n).collect()],
            membership: vec![0; n],
        }
    }

    pub fn k(&self) -> usize {
        self.groups.len()
    }

    pub fn n(&self) -> usize {
        self.membership.len()
    }

    pub fn group(&self, k: usize) -> &[usize] {
        &self.groups[k]
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn group_of(&self, i: usize) -> usize {
        self.membership[i]
    }
}

/// Splits units into `|cuts|+1` groups by empirical quantiles of one
/// covariate column.
///
/// Quantiles use the inverted-CDF rule: the cut at fraction `c` is the
/// smallest order statistic whose empirical CDF is at least `c`. Values equal
/// to a cut go to the lower group.
pub fn partition_by_quantiles(
    dataset: &Dataset,
    column: usize,
    cuts: &[f64],
) -> Result<SubgroupPartition> {
    if column >= dataset.d() {
        return Err(Error::ColumnOutOfRange {
            index: column,
            d: dataset.d(),
        });
    }
    if cuts.iter().any(|&c| !(c > 0.0 && c < 1.0)) || cuts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidCuts);
    }
    let values = dataset.x().column(column);
    let n = values.len();
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    let thresholds: Vec<f64> = cuts
        .iter()
        .map(|&c| {
            let rank = ((c * n as f64) - 1e-9).ceil().max(1.0) as usize;
            sorted[rank.min(n) - 1]
        })
        .collect();
    let labels: Vec<usize> = values
        .iter()
        .map(|&v| thresholds.iter().take_while(|&&t| v > t).count())
        .collect();
    let mut groups = vec![Vec::new(); cuts.len() + 1];
    for (i, &g) in labels.iter().enumerate() {
        groups[g].push(i);
    }
    if let Some(g) = groups.iter().position(Vec::is_empty) {
        return Err(Error::EmptySubgroup { group: g });
    }
    Ok(SubgroupPartition {
        groups,
        membership: labels,
    })
}

/// Nuisance fold `I` and per-subgroup inference folds `J_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldState {
    nuisance: Vec<usize>,
    inference: Vec<Vec<usize>>,
    proportions: Vec<f64>,
    #[serde(skip)]
    in_nuisance: Vec<bool>,
    #[serde(skip)]
    group_sizes: Vec<usize>,
    #[serde(skip)]
    membership: Vec<usize>,
}

impl FoldState {
    /// All units start in the inference folds of their subgroups.
    pub fn all_inference(partition: &SubgroupPartition) -> Self {
        let inference: Vec<Vec<usize>> = partition.groups().to_vec();
        let group_sizes: Vec<usize> = inference.iter().map(Vec::len).collect();
        Self {
            nuisance: Vec::new(),
            proportions: vec![1.0; inference.len()],
            inference,
            in_nuisance: vec![false; partition.n()],
            group_sizes,
            membership: (0..partition.n()).map(|i| partition.group_of(i)).collect(),
        }
    }

    /// Moves unit `j` from its inference fold to the nuisance fold.
    /// Returns `false` if it was already in the nuisance fold.
    pub fn move_to_nuisance(&mut self, j: usize) -> bool {
        if self.in_nuisance[j] {
            return false;
        }
        let k = self.membership[j];
        let pos = self.inference[k]
            .binary_search(&j)
            .expect("inference folds stay sorted and consistent");
        self.inference[k].remove(pos);
        let at = self.nuisance.binary_search(&j).unwrap_err();
        self.nuisance.insert(at, j);
        self.in_nuisance[j] = true;
        self.proportions[k] = self.inference[k].len() as f64 / self.group_sizes[k] as f64;
        true
    }

    pub fn nuisance(&self) -> &[usize] {
        &self.nuisance
    }

    pub fn inference(&self, k: usize) -> &[usize] {
        &self.inference[k]
    }

    pub fn inference_folds(&self) -> &[Vec<usize>] {
        &self.inference
    }

    /// All inference units in increasing index order.
    pub fn inference_all(&self) -> Vec<usize> {
        (0..self.in_nuisance.len())
            .filter(|&i| !self.in_nuisance[i])
            .collect()
    }

    pub fn is_nuisance(&self, i: usize) -> bool {
        self.in_nuisance[i]
    }

    pub fn nuisance_mask(&self) -> &[bool] {
        &self.in_nuisance
    }

    pub fn proportions(&self) -> &[f64] {
        &self.proportions
    }

    pub fn proportion(&self, k: usize) -> f64 {
        self.proportions[k]
    }

    pub fn group_size(&self, k: usize) -> usize {
        self.group_sizes[k]
    }

    pub fn k(&self) -> usize {
        self.inference.len()
    }

    pub fn n(&self) -> usize {
        self.in_nuisance.len()
    }
}

/// Tuning parameters of the adaptive splitting procedure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaSplitConfig {
    /// Initial nuisance proportion per subgroup.
    pub p_init: f64,
    /// Minimum inference proportion each subgroup keeps.
    pub rho: f64,
    /// Stopping threshold on `1 - R²` between consecutive CATE fits.
    pub eps_l: f64,
    /// Convergence window length.
    pub n0: usize,
    /// Monte-Carlo draws per randomization p-value.
    pub mc_draws: usize,
    /// Per-hypothesis level used for single-test rejection summaries.
    pub alpha: f64,
    /// Family-wise error level for closed testing.
    pub q: f64,
    /// Neighbourhood size of the selection-probability smoother.
    pub knn_k: usize,
    pub ridge_lambda: f64,
    /// Weight of the imputed loss in the BaR-learner.
    pub lambda_imputed: f64,
    /// Posterior clipping used by the Gaussian-approximation diagnostic.
    pub delta_clip: f64,
    pub seed: u64,
    /// Refit nuisances every this many selections.
    pub refit_every: usize,
}

impl Default for AdaSplitConfig {
    fn default() -> Self {
        Self {
            p_init: 0.05,
            rho: 0.5,
            eps_l: 0.01,
            n0: 50,
            mc_draws: 1000,
            alpha: 0.2,
            q: 0.2,
            knn_k: 10,
            ridge_lambda: 1e-8,
            lambda_imputed: 1.0,
            delta_clip: 1e-6,
            seed: 1,
            refit_every: 1,
        }
    }
}

impl AdaSplitConfig {
    pub fn validate(&self) -> Result<()> {
        let frac = |v: f64| v > 0.0 && v < 1.0;
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !frac(self.p_init) {
            return bad("p_init must lie in (0,1)");
        }
        if !frac(self.rho) {
            return bad("rho must lie in (0,1)");
        }
        if !(self.eps_l > 0.0) {
            return bad("eps_l must be positive");
        }
        if self.n0 < 1 {
            return bad("n0 must be at least 1");
        }
        if self.mc_draws < 1 {
            return bad("mc_draws must be at least 1");
        }
        if !frac(self.alpha) {
            return bad("alpha must lie in (0,1)");
        }
        if !frac(self.q) {
            return bad("q must lie in (0,1)");
        }
        if self.knn_k < 1 {
            return bad("knn_k must be at least 1");
        }
        if !(self.ridge_lambda >= 0.0) || !self.ridge_lambda.is_finite() {
            return bad("ridge_lambda must be finite and nonnegative");
        }
        if !(self.lambda_imputed >= 0.0) || !self.lambda_imputed.is_finite() {
            return bad("lambda_imputed must be finite and nonnegative");
        }
        if !(self.delta_clip > 0.0 && self.delta_clip < 0.5) {
            return bad("delta_clip must lie in (0,1/2)");
        }
        if self.refit_every < 1 {
            return bad("refit_every must be at least 1");
        }
        Ok(())
    }
}
