//! Small dense least-squares solvers.
//!
//! Dimensions here are tiny (an intercept plus a handful of covariates), so
//! everything goes through the regularized normal equations and a Cholesky
//! factorization.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Matrix;
use crate::error::{Error, Result};

/// Affine model `β₀ + xᵀβ₁`, intercept first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    coefficients: Vec<f64>,
}

impl LinearModel {
    pub fn new(coefficients: Vec<f64>) -> Self {
        assert!(!coefficients.is_empty(), "intercept required");
        Self { coefficients }
    }

    /// The all-zero model on `d` covariates.
    pub fn zeros(d: usize) -> Self {
        Self::new(vec![0.0; d + 1])
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn d(&self) -> usize {
        self.coefficients.len() - 1
    }

    #[inline]
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.d());
        self.coefficients[0]
            + self.coefficients[1..]
                .iter()
                .zip(x)
                .map(|(b, v)| b * v)
                .sum::<f64>()
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        if x.ncols() != self.d() {
            return Err(Error::DimensionMismatch {
                expected: self.d(),
                got: x.ncols(),
            });
        }
        Ok(x.rows_iter().map(|r| self.predict_row(r)).collect())
    }
}

/// Anything that maps a covariate row to a prediction.
pub trait Predictor {
    fn predict_row(&self, x: &[f64]) -> f64;
}

impl Predictor for LinearModel {
    fn predict_row(&self, x: &[f64]) -> f64 {
        LinearModel::predict_row(self, x)
    }
}

/// Fit/predict seam for the outcome model.
pub trait Regressor {
    type Fitted: Predictor;
    fn fit(&self, x: &Matrix, y: &[f64]) -> Result<Self::Fitted>;
}

/// Affine least squares with an optional ridge penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeastSquares {
    pub ridge: f64,
}

impl Default for LeastSquares {
    fn default() -> Self {
        Self { ridge: 1e-8 }
    }
}

impl Regressor for LeastSquares {
    type Fitted = LinearModel;

    fn fit(&self, x: &Matrix, y: &[f64]) -> Result<LinearModel> {
        fit_wls(x, y, &vec![1.0; y.len()], self.ridge)
    }
}

/// Accumulates the weighted normal equations `Σ wᵢ aᵢaᵢᵀ`, `Σ wᵢ aᵢ tᵢ`
/// with `aᵢ = [1, xᵢ]`.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    gram: DMatrix<f64>,
    rhs: DVector<f64>,
}

impl NormalEquations {
    pub fn new(d: usize) -> Self {
        Self {
            gram: DMatrix::zeros(d + 1, d + 1),
            rhs: DVector::zeros(d + 1),
        }
    }

    #[inline]
    pub fn add(&mut self, x: &[f64], target: f64, weight: f64) {
        let p = x.len() + 1;
        let a = |j: usize| if j == 0 { 1.0 } else { x[j - 1] };
        for r in 0..p {
            let wr = weight * a(r);
            self.rhs[r] += wr * target;
            for c in 0..=r {
                self.gram[(r, c)] += wr * a(c);
            }
        }
    }

    /// Solves `(G + ridge·I) β = b`.
    pub fn solve(mut self, ridge: f64) -> Result<LinearModel> {
        let p = self.rhs.len();
        for r in 0..p {
            for c in 0..r {
                self.gram[(c, r)] = self.gram[(r, c)];
            }
        }
        let scale = (0..p).map(|i| self.gram[(i, i)].abs()).fold(0.0, f64::max);
        for i in 0..p {
            self.gram[(i, i)] += ridge;
        }
        let chol = self.gram.cholesky().ok_or(Error::SingularDesign)?;
        if ridge == 0.0 {
            let l = chol.l_dirty();
            let min_pivot = (0..p).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
            if !(min_pivot > 1e-12 * scale.max(f64::MIN_POSITIVE)) {
                return Err(Error::SingularDesign);
            }
        }
        let beta = chol.solve(&self.rhs);
        if beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::SingularDesign);
        }
        Ok(LinearModel::new(beta.iter().copied().collect()))
    }
}

/// Weighted, ridge-regularized affine least squares:
/// `argmin Σ wᵢ (yᵢ − [1,xᵢ]·β)² + ridge·‖β‖²`.
pub fn fit_wls(x: &Matrix, y: &[f64], w: &[f64], ridge: f64) -> Result<LinearModel> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::EmptyInput("design"));
    }
    if y.len() != n {
        return Err(Error::LengthMismatch {
            what: "y",
            got: y.len(),
            expected: n,
        });
    }
    if w.len() != n {
        return Err(Error::LengthMismatch {
            what: "weights",
            got: w.len(),
            expected: n,
        });
    }
    if !w.iter().any(|&v| v > 0.0) {
        return Err(Error::NoPositiveWeights);
    }
    let mut ne = NormalEquations::new(x.ncols());
    for ((row, &t), &wi) in x.rows_iter().zip(y).zip(w) {
        if wi != 0.0 {
            ne.add(row, t, wi);
        }
    }
    ne.solve(ridge)
}

/// Leverage-style scores `xᵢᵀ (XᵀX + ridge·I)⁻² xᵢ` on the raw covariates
/// (no intercept column).
pub fn diversity_scores(x: &Matrix, ridge: f64) -> Result<Vec<f64>> {
    let d = x.ncols();
    let mut gram = DMatrix::<f64>::zeros(d, d);
    for row in x.rows_iter() {
        for r in 0..d {
            for c in 0..d {
                gram[(r, c)] += row[r] * row[c];
            }
        }
    }
    let scale = (0..d).map(|i| gram[(i, i)]).fold(0.0, f64::max);
    for i in 0..d {
        gram[(i, i)] += ridge;
    }
    let chol = gram.cholesky().ok_or(Error::SingularDesign)?;
    if ridge == 0.0 {
        let l = chol.l_dirty();
        let min_pivot = (0..d).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
        if !(min_pivot > 1e-12 * scale.max(f64::MIN_POSITIVE)) {
            return Err(Error::SingularDesign);
        }
    }
    Ok(x.rows_iter()
        .map(|row| {
            let v = chol.solve(&DVector::from_column_slice(row));
            v.norm_squared()
        })
        .collect())
}
