use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{partition_by_quantiles, Dataset, Matrix, SubgroupPartition};
use crate::error::{Error, Result};
use crate::rng::{tags, CounterRng};

/// Covariate law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CovariateSpec {
    /// `X₁..X₃ ~ U[−½,½]`, `X₄, X₅ ∈ {−½,½}` with `P(X₄=½)=¼`, `P(X₅=½)=¾`.
    Mixed5,
    /// One covariate, `X ~ U(0,5)`.
    Uniform0To5,
}

/// Affine function `a + bᵀx`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub intercept: f64,
    pub slopes: Vec<f64>,
}

impl Affine {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.intercept + self.slopes.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }

    /// Coefficients with the intercept first.
    pub fn coefficients(&self) -> Vec<f64> {
        std::iter::once(self.intercept)
            .chain(self.slopes.iter().copied())
            .collect()
    }
}

/// A synthetic data-generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub n: usize,
    pub nu2: f64,
    pub covariates: CovariateSpec,
    pub mu0: Affine,
    pub tau: Affine,
    /// Quantile cuts on the first covariate.
    pub cuts: Vec<f64>,
}

/// True nuisance values of a generated sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueNuisances {
    pub mu0: Vec<f64>,
    pub tau: Vec<f64>,
    /// CATE coefficients, intercept first.
    pub tau_coefficients: Vec<f64>,
}

pub const SCENARIOS: [&str; 5] = ["default", "larger_n", "high_noise", "null", "toy_fig3"];

impl Scenario {
    /// Looks up a named scenario.
    pub fn named(name: &str) -> Result<Self> {
        let quintiles = vec![0.2, 0.4, 0.6, 0.8];
        let base = Scenario {
            name: "default".into(),
            n: 500,
            nu2: 1.0,
            covariates: CovariateSpec::Mixed5,
            mu0: Affine {
                intercept: 1.0,
                slopes: vec![2.0; 5],
            },
            tau: Affine {
                intercept: 0.5,
                slopes: vec![1.0; 5],
            },
            cuts: quintiles,
        };
        let s = match name {
            "default" => base,
            "larger_n" => Scenario { n: 1000, ..base },
            "high_noise" => Scenario { nu2: 2.0, ..base },
            "null" => Scenario {
                tau: Affine {
                    intercept: 0.0,
                    slopes: vec![0.0; 5],
                },
                ..base
            },
            "toy_fig3" => Scenario {
                n: 200,
                nu2: 1.0,
                covariates: CovariateSpec::Uniform0To5,
                mu0: Affine {
                    intercept: 0.0,
                    slopes: vec![0.0],
                },
                tau: Affine {
                    intercept: 0.0,
                    slopes: vec![1.0],
                },
                cuts: Vec::new(),
                name: String::new(),
            },
            other => return Err(Error::UnknownScenario(other.to_string())),
        };
        Ok(Scenario {
            name: name.to_string(),
            ..s
        })
    }

    pub fn d(&self) -> usize {
        match self.covariates {
            CovariateSpec::Mixed5 => 5,
            CovariateSpec::Uniform0To5 => 1,
        }
    }

    /// Draws `m` covariate rows.
    pub fn sample_covariates<R: Rng>(&self, m: usize, rng: &mut R) -> Matrix {
        let d = self.d();
        let mut data = Vec::with_capacity(m * d);
        for _ in 0..m {
            match self.covariates {
                CovariateSpec::Mixed5 => {
                    for _ in 0..3 {
                        data.push(rng.random::<f64>() - 0.5);
                    }
                    data.push(if rng.random::<f64>() < 0.25 { 0.5 } else { -0.5 });
                    data.push(if rng.random::<f64>() < 0.75 { 0.5 } else { -0.5 });
                }
                CovariateSpec::Uniform0To5 => data.push(5.0 * rng.random::<f64>()),
            }
        }
        Matrix::from_row_major(m, d, data).expect("shape is consistent")
    }
}

/// Draws a sample and its subgroup partition.
pub fn generate(
    scenario: &Scenario,
    seed: u64,
) -> Result<(Dataset, SubgroupPartition, TrueNuisances)> {
    let mut rng = CounterRng::from_path(seed, &[tags::DATA]);
    let x = scenario.sample_covariates(scenario.n, &mut rng);
    let noise = Normal::new(0.0, scenario.nu2.sqrt()).map_err(|_| {
        Error::InvalidConfig(format!("noise variance {} is invalid", scenario.nu2))
    })?;
    let n = scenario.n;
    let mut y = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    let mut mu0 = Vec::with_capacity(n);
    let mut tau = Vec::with_capacity(n);
    for i in 0..n {
        let row = x.row(i);
        let m = scenario.mu0.eval(row);
        let t = scenario.tau.eval(row);
        let zi = if rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 };
        y.push(m + zi * t + noise.sample(&mut rng));
        z.push(zi);
        mu0.push(m);
        tau.push(t);
    }
    let dataset = Dataset::new(x, y, z, None)?;
    let partition = partition_by_quantiles(&dataset, 0, &scenario.cuts)?;
    Ok((
        dataset,
        partition,
        TrueNuisances {
            mu0,
            tau,
            tau_coefficients: scenario.tau.coefficients(),
        },
    ))
}
