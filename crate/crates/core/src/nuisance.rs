//! Nuisance estimators: outcome model, Robinson residuals, R-learner
//! variants, selection probabilities, posterior assignment probabilities and
//! the BaR-learner.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Matrix};
use crate::error::{Error, Result};
use crate::regress::{LinearModel, NormalEquations, Regressor};
use crate::special::sigmoid;

/// Fits the outcome model `μ̂(x) ≈ E[Y | X = x]` on all units. No
/// assignments are used.
pub fn fit_mu<R: Regressor>(regressor: &R, dataset: &Dataset) -> Result<R::Fitted> {
    regressor.fit(dataset.x(), dataset.y())
}

/// `[y − μ̂(x)] / [z − e(x)]`.
#[inline]
pub fn scaled_residual(y: f64, mu_x: f64, z: u8, e: f64) -> f64 {
    (y - mu_x) / (f64::from(z) - e)
}

/// Scaled residual with the assignment marginalized over `Bern(ê)`.
#[inline]
pub fn marginalized_residual(y: f64, mu_x: f64, e: f64, e_hat: f64) -> f64 {
    e_hat * scaled_residual(y, mu_x, 1, e) + (1.0 - e_hat) * scaled_residual(y, mu_x, 0, e)
}

/// Certainty score `|2e − 1|`.
#[inline]
pub fn certainty(e_val: f64) -> f64 {
    (2.0 * e_val - 1.0).abs()
}

/// Posterior assignment probability under the Bern(1/2) design:
/// `σ([y − μ̂(x)]·τ̂(x)/ν̂²)`.
#[inline]
pub fn posterior_e(residual: f64, tau_x: f64, nu2: f64) -> f64 {
    debug_assert!(nu2 > 0.0);
    sigmoid(residual * tau_x / nu2)
}

fn check_fold(fold: &[usize], params: usize) -> Result<()> {
    if fold.len() < params {
        return Err(Error::FoldTooSmall {
            size: fold.len(),
            params,
        });
    }
    Ok(())
}

/// R-learner on the fold: least squares of the scaled residuals on the
/// covariates over `fold`.
pub fn fit_rlearner_ols(
    dataset: &Dataset,
    fold: &[usize],
    mu_hat: &[f64],
    ridge: f64,
) -> Result<LinearModel> {
    fit_rlearner_weighted(dataset, fold, mu_hat, None, ridge)
}

/// R-learner with Horvitz–Thompson weights `1/p̂ᵢ` on the fold units.
/// `p_hat` is indexed by unit; `None` means unit weights.
pub fn fit_rlearner_weighted(
    dataset: &Dataset,
    fold: &[usize],
    mu_hat: &[f64],
    p_hat: Option<&[f64]>,
    ridge: f64,
) -> Result<LinearModel> {
    check_fold(fold, dataset.d() + 1)?;
    let e = dataset.design_probs();
    let mut ne = NormalEquations::new(dataset.d());
    for &i in fold {
        let r = scaled_residual(dataset.y()[i], mu_hat[i], dataset.assignment(i), e[i]);
        let w = p_hat.map_or(1.0, |p| 1.0 / p[i]);
        ne.add(dataset.x().row(i), r, w);
    }
    ne.solve(ridge)
}

/// Variance floor used by [`estimate_noise_var`].
pub fn noise_var_floor(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (1e-8 * var).max(f64::MIN_POSITIVE)
}

/// Horvitz–Thompson estimate of the noise variance from the fold, with the
/// Robinson residual `Y − μ̂ − (Z − e)·τ̂`.
pub fn estimate_noise_var(
    dataset: &Dataset,
    fold: &[usize],
    mu_hat: &[f64],
    tau: &LinearModel,
    p_hat: Option<&[f64]>,
) -> f64 {
    let n = dataset.n() as f64;
    let e = dataset.design_probs();
    let total: f64 = fold
        .iter()
        .map(|&i| {
            let x = dataset.x().row(i);
            let z = f64::from(dataset.assignment(i));
            let r = dataset.y()[i] - mu_hat[i] - (z - e[i]) * tau.predict_row(x);
            let w = p_hat.map_or(1.0, |p| 1.0 / p[i]);
            w * r * r
        })
        .sum();
    (total / n).max(noise_var_floor(dataset.y()))
}

/// Fitted CATE model paired with a noise variance; together with μ̂ they
/// define the posterior `ê(x, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceModel {
    pub mu_hat: Vec<f64>,
    pub tau: LinearModel,
    pub nu2: f64,
}

impl NuisanceModel {
    /// Posterior assignment probability of unit `i`.
    pub fn posterior_at(&self, dataset: &Dataset, i: usize) -> f64 {
        posterior_e(
            dataset.y()[i] - self.mu_hat[i],
            self.tau.predict_row(dataset.x().row(i)),
            self.nu2,
        )
    }

    /// Posterior for every unit.
    pub fn posterior_all(&self, dataset: &Dataset) -> Vec<f64> {
        (0..dataset.n()).map(|i| self.posterior_at(dataset, i)).collect()
    }
}

/// Precomputed κ-nearest-neighbour lists over standardized `(X, Y)`.
///
/// Neighbourhoods depend only on covariates and outcomes, so they are built
/// once and reused while the fold indicator changes.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    k: usize,
    points: Matrix,
    center: Vec<f64>,
    scale: Vec<f64>,
    neighbors: Vec<Vec<usize>>,
}

impl NeighborIndex {
    pub fn build(x: &Matrix, y: &[f64], k: usize) -> Result<Self> {
        let n = x.nrows();
        if k == 0 {
            return Err(Error::InvalidConfig("knn_k must be at least 1".into()));
        }
        if k > n {
            return Err(Error::KernelTooLarge { k, n });
        }
        let dim = x.ncols() + 1;
        let raw = |i: usize, j: usize| if j < x.ncols() { x.get(i, j) } else { y[i] };
        let mut center = vec![0.0; dim];
        let mut scale = vec![0.0; dim];
        for j in 0..dim {
            let m = (0..n).map(|i| raw(i, j)).sum::<f64>() / n as f64;
            let v = (0..n).map(|i| (raw(i, j) - m).powi(2)).sum::<f64>() / n as f64;
            center[j] = m;
            scale[j] = if v > 0.0 { v.sqrt() } else { 1.0 };
        }
        let mut data = Vec::with_capacity(n * dim);
        for i in 0..n {
            for j in 0..dim {
                data.push((raw(i, j) - center[j]) / scale[j]);
            }
        }
        let points = Matrix::from_row_major(n, dim, data)?;
        let mut neighbors = Vec::with_capacity(n);
        let mut dist: Vec<(f64, usize)> = Vec::with_capacity(n);
        for i in 0..n {
            dist.clear();
            let pi = points.row(i);
            dist.extend((0..n).map(|j| (sq_dist(pi, points.row(j)), j)));
            neighbors.push(k_smallest(&mut dist, k));
        }
        Ok(Self {
            k,
            points,
            center,
            scale,
            neighbors,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// κ nearest stored units of an arbitrary `(x, y)`.
    pub fn query(&self, x: &[f64], y: f64) -> Vec<usize> {
        let dim = self.center.len();
        let q: Vec<f64> = (0..dim)
            .map(|j| {
                let v = if j + 1 < dim { x[j] } else { y };
                (v - self.center[j]) / self.scale[j]
            })
            .collect();
        let mut dist: Vec<(f64, usize)> = (0..self.points.nrows())
            .map(|j| (sq_dist(&q, self.points.row(j)), j))
            .collect();
        k_smallest(&mut dist, self.k)
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

/// Indices of the `k` smallest distances, ties by lowest index.
fn k_smallest(dist: &mut [(f64, usize)], k: usize) -> Vec<usize> {
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < dist.len() {
        dist.select_nth_unstable_by(k - 1, cmp);
    }
    let head = &mut dist[..k];
    head.sort_by(cmp);
    head.iter().map(|&(_, j)| j).collect()
}

/// Nadaraya–Watson estimate of the selection probability `P(B = 1 | X, Y)`
/// with a κ-nearest-neighbour kernel.
#[derive(Debug, Clone)]
pub struct SelectionModel {
    index: Arc<NeighborIndex>,
    selected: Vec<bool>,
    at_units: Vec<f64>,
}

impl SelectionModel {
    pub fn from_index(index: Arc<NeighborIndex>, selected: &[bool]) -> Self {
        let at_units = (0..selected.len())
            .map(|i| vote(index.neighbors(i), selected, index.k()))
            .collect();
        Self {
            index,
            selected: selected.to_vec(),
            at_units,
        }
    }

    /// `p̂` at stored unit `i`.
    pub fn at(&self, i: usize) -> f64 {
        self.at_units[i]
    }

    /// `p̂` at every stored unit.
    pub fn at_units(&self) -> &[f64] {
        &self.at_units
    }

    /// `p̂(x, y)` at an arbitrary point.
    pub fn predict(&self, x: &[f64], y: f64) -> f64 {
        vote(&self.index.query(x, y), &self.selected, self.index.k())
    }
}

fn vote(neighbors: &[usize], selected: &[bool], k: usize) -> f64 {
    let hits = neighbors.iter().filter(|&&j| selected[j]).count();
    (hits as f64 / k as f64).clamp(1.0 / (2.0 * k as f64), 1.0)
}

/// Fits the κ-NN selection-probability model on `(X, Y, B)`.
pub fn fit_selection_prob(x: &Matrix, y: &[f64], selected: &[bool], k: usize) -> Result<SelectionModel> {
    let index = NeighborIndex::build(x, y, k)?;
    Ok(SelectionModel::from_index(Arc::new(index), selected))
}

/// BaR-learner: minimizes the full-data R-learner loss on the nuisance fold
/// plus `lambda` times the imputed loss on the remaining units, where each
/// held-out assignment is marginalized over `Bern(ê)`.
///
/// Every term is quadratic in `τ(xᵢ)`, so the minimizer is a weighted least
/// squares fit. Fold units contribute weight `(zᵢ − eᵢ)²` on `R̂ᵢ`; held-out
/// units contribute weight `λ[ê(1−e)² + (1−ê)e²]` on the matching pooled
/// target. Under `e ≡ 1/2` this is the plain regression of `R̂ᵢ` and the
/// marginalized residual on the covariates.
pub fn fit_bar_learner(
    dataset: &Dataset,
    in_fold: &[bool],
    mu_hat: &[f64],
    e_hat: &[f64],
    lambda: f64,
    ridge: f64,
) -> Result<LinearModel> {
    let n = dataset.n();
    if in_fold.len() != n || e_hat.len() != n || mu_hat.len() != n {
        return Err(Error::LengthMismatch {
            what: "per-unit inputs",
            got: in_fold.len().min(e_hat.len()).min(mu_hat.len()),
            expected: n,
        });
    }
    if !in_fold.iter().any(|&b| b) {
        return Err(Error::FoldTooSmall { size: 0, params: 1 });
    }
    let e = dataset.design_probs();
    let mut ne = NormalEquations::new(dataset.d());
    for i in 0..n {
        let resid = dataset.y()[i] - mu_hat[i];
        let x = dataset.x().row(i);
        if in_fold[i] {
            let c = f64::from(dataset.assignment(i)) - e[i];
            ne.add(x, resid / c, c * c);
        } else if lambda > 0.0 {
            let (c1, c0) = (1.0 - e[i], -e[i]);
            let w = lambda * (e_hat[i] * c1 * c1 + (1.0 - e_hat[i]) * c0 * c0);
            let lin = lambda * (e_hat[i] * c1 + (1.0 - e_hat[i]) * c0) * resid;
            ne.add(x, lin / w, w);
        }
    }
    ne.solve(ridge)
}

/// Expected squared distance between the BaR coefficients on fold `I` and
/// the full-data R-learner coefficients, when held-out assignments follow
/// their posterior: `4 Σ_{j∉I} aⱼᵀ(AᵀA)⁻²aⱼ · [Yⱼ − μ̂(Xⱼ)]² · (1 − Cⱼ²)`,
/// with design rows `aⱼ = [1, Xⱼ]`.
pub fn expected_beta_distance(
    dataset: &Dataset,
    in_fold: &[bool],
    mu_hat: &[f64],
    certainty_scores: &[f64],
    ridge: f64,
) -> Result<f64> {
    let p = dataset.d() + 1;
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let aug = |row: &[f64]| {
        let mut a = Vec::with_capacity(p);
        a.push(1.0);
        a.extend_from_slice(row);
        DVector::from_vec(a)
    };
    for row in dataset.x().rows_iter() {
        let a = aug(row);
        gram += &a * a.transpose();
    }
    for i in 0..p {
        gram[(i, i)] += ridge;
    }
    let chol = gram.cholesky().ok_or(Error::SingularDesign)?;
    let mut total = 0.0;
    for j in 0..dataset.n() {
        if in_fold[j] {
            continue;
        }
        let v = chol.solve(&aug(dataset.x().row(j)));
        let r = dataset.y()[j] - mu_hat[j];
        let c = certainty_scores[j];
        total += v.norm_squared() * r * r * (1.0 - c * c);
    }
    Ok(4.0 * total)
}

/// Partial sum `4 Σ_{t=1}^{terms} (−1)^{t+1} t e^{−ts}` of the series for
/// `1 − C²`; for `s < 1e-3` the direct value `1 − tanh²(s/2)` is returned.
pub fn one_minus_c2_series(s: f64, terms: usize) -> f64 {
    assert!(s >= 0.0, "s must be nonnegative");
    if s < 1e-3 {
        let t = (s / 2.0).tanh();
        return 1.0 - t * t;
    }
    let mut sum = 0.0;
    for t in 1..=terms {
        let term = t as f64 * (-(t as f64) * s).exp();
        if t % 2 == 1 {
            sum += term;
        } else {
            sum -= term;
        }
    }
    4.0 * sum
}
