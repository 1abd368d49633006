//! Randomization tests: test statistics, Monte-Carlo and exact p-values,
//! and the Gaussian-approximation diagnostics used to reason about power.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nuisance::{certainty, posterior_e};
use crate::regress::LinearModel;
use crate::rng::{tags, CounterRng};
use crate::special::normal_cdf;

/// Largest subgroup handled by exhaustive enumeration.
pub const MAX_EXACT_UNITS: usize = 20;

/// Difference in means scaled for the Bern(1/2) design:
/// `(2/|S|)·[Σ zᵢyᵢ − Σ (1−zᵢ)yᵢ]`.
pub fn t_dm(y: &[f64], z: &[u8]) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::EmptyInput("subgroup"));
    }
    Ok(dm_unchecked(y, z))
}

#[inline]
fn dm_unchecked(y: &[f64], z: &[u8]) -> f64 {
    let mut treated = 0.0;
    let mut control = 0.0;
    for (&yi, &zi) in y.iter().zip(z) {
        if zi == 1 {
            treated += yi;
        } else {
            control += yi;
        }
    }
    2.0 / y.len() as f64 * (treated - control)
}

/// AIPW score with `μ̂_z = μ̂ + (z − e)τ̂`.
#[inline]
pub fn phi_aipw(y: f64, z: u8, e: f64, mu_x: f64, tau_x: f64) -> f64 {
    let mu1 = mu_x + (1.0 - e) * tau_x;
    let mu0 = mu_x - e * tau_x;
    let z = f64::from(z);
    z / e * (y - mu1) - (1.0 - z) / (1.0 - e) * (y - mu0) + tau_x
}

/// Which statistic a randomization test uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TestStatisticSpec {
    DifferenceInMeans,
    /// Averaged AIPW score with outcome predictions `mu_hat` (indexed by
    /// unit) and the CATE model `tau`.
    Aipw { mu_hat: Vec<f64>, tau: LinearModel },
}

impl TestStatisticSpec {
    pub fn name(&self) -> &'static str {
        match self {
            Self::DifferenceInMeans => "difference-in-means",
            Self::Aipw { .. } => "aipw",
        }
    }

    /// Binds the statistic to a set of units.
    pub fn prepare(&self, dataset: &Dataset, units: &[usize]) -> PreparedStatistic {
        let y: Vec<f64> = units.iter().map(|&i| dataset.y()[i]).collect();
        let e: Vec<f64> = units.iter().map(|&i| dataset.design_probs()[i]).collect();
        match self {
            Self::DifferenceInMeans => PreparedStatistic::Dm { y, e },
            Self::Aipw { mu_hat, tau } => {
                let mu = units.iter().map(|&i| mu_hat[i]).collect();
                let tau_x = units
                    .iter()
                    .map(|&i| tau.predict_row(dataset.x().row(i)))
                    .collect();
                PreparedStatistic::Aipw { y, e, mu, tau_x }
            }
        }
    }
}

/// A statistic evaluated on a fixed list of units as a function of their
/// assignments.
#[derive(Debug, Clone)]
pub enum PreparedStatistic {
    Dm {
        y: Vec<f64>,
        e: Vec<f64>,
    },
    Aipw {
        y: Vec<f64>,
        e: Vec<f64>,
        mu: Vec<f64>,
        tau_x: Vec<f64>,
    },
}

impl PreparedStatistic {
    pub fn len(&self) -> usize {
        self.design().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn design(&self) -> &[f64] {
        match self {
            Self::Dm { e, .. } | Self::Aipw { e, .. } => e,
        }
    }

    pub fn eval(&self, z: &[u8]) -> f64 {
        match self {
            Self::Dm { y, .. } => dm_unchecked(y, z),
            Self::Aipw { y, e, mu, tau_x } => {
                let total: f64 = (0..y.len())
                    .map(|j| phi_aipw(y[j], z[j], e[j], mu[j], tau_x[j]))
                    .sum();
                total / y.len() as f64
            }
        }
    }
}

/// A randomization p-value with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PValue {
    pub value: f64,
    /// Monte-Carlo draws used; `None` for exact enumeration.
    pub draws: Option<usize>,
    pub observed: f64,
    pub subgroup: usize,
    /// Set when the subgroup had no units to test.
    pub empty: bool,
}

/// Monte-Carlo randomization p-value `(1 + #{T̃ ≥ T_obs}) / (M + 1)` for an
/// arbitrary statistic of the assignment vector.
///
/// Draw `t` uses the stream keyed by `(seed, subgroup, t)`.
pub fn randomization_pvalue<F>(
    statistic: F,
    observed_z: &[u8],
    design: &[f64],
    draws: usize,
    seed: u64,
    subgroup: usize,
) -> (f64, f64)
where
    F: Fn(&[u8]) -> f64,
{
    let observed = statistic(observed_z);
    let mut z = vec![0u8; observed_z.len()];
    let mut exceed = 0usize;
    for t in 0..draws {
        let mut rng = CounterRng::from_path(seed, &[tags::MC_DRAWS, subgroup as u64, t as u64]);
        for (zj, &ej) in z.iter_mut().zip(design) {
            *zj = u8::from(rng.bernoulli(ej));
        }
        if statistic(&z) >= observed {
            exceed += 1;
        }
    }
    ((1 + exceed) as f64 / (draws + 1) as f64, observed)
}

/// Monte-Carlo randomization p-value of `spec` on `units`.
pub fn mc_pvalue(
    spec: &TestStatisticSpec,
    dataset: &Dataset,
    units: &[usize],
    subgroup: usize,
    draws: usize,
    seed: u64,
) -> PValue {
    if units.is_empty() {
        return PValue {
            value: 1.0,
            draws: Some(draws),
            observed: 0.0,
            subgroup,
            empty: true,
        };
    }
    let stat = spec.prepare(dataset, units);
    let z_obs = dataset.assignments_of(units);
    let (value, observed) =
        randomization_pvalue(|z| stat.eval(z), &z_obs, stat.design(), draws, seed, subgroup);
    PValue {
        value,
        draws: Some(draws),
        observed,
        subgroup,
        empty: false,
    }
}

/// Exact randomization p-value by enumerating all `2^|units|` assignments,
/// each weighted by its design probability.
pub fn exact_pvalue(
    spec: &TestStatisticSpec,
    dataset: &Dataset,
    units: &[usize],
    subgroup: usize,
) -> Result<PValue> {
    let m = units.len();
    if m > MAX_EXACT_UNITS {
        return Err(Error::SubgroupTooLarge {
            size: m,
            max: MAX_EXACT_UNITS,
        });
    }
    if m == 0 {
        return Ok(PValue {
            value: 1.0,
            draws: None,
            observed: 0.0,
            subgroup,
            empty: true,
        });
    }
    let stat = spec.prepare(dataset, units);
    let z_obs = dataset.assignments_of(units);
    let observed = stat.eval(&z_obs);
    let design = stat.design();
    let uniform = design.iter().all(|&e| e == 0.5);
    let mut z = vec![0u8; m];
    let mut count: u64 = 0;
    let mut mass = 0.0;
    for mask in 0u64..(1u64 << m) {
        let mut prob = 1.0;
        for (j, zj) in z.iter_mut().enumerate() {
            *zj = ((mask >> j) & 1) as u8;
            if !uniform {
                prob *= if *zj == 1 { design[j] } else { 1.0 - design[j] };
            }
        }
        if stat.eval(&z) >= observed {
            count += 1;
            mass += prob;
        }
    }
    let value = if uniform {
        count as f64 / (1u64 << m) as f64
    } else {
        mass
    };
    Ok(PValue {
        value,
        draws: None,
        observed,
        subgroup,
        empty: false,
    })
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Per-unit certainty scores from residuals `y − μ(x)`, CATE values and the
/// noise variance, with the posterior clipped to `[δ, 1 − δ]`.
pub fn clipped_certainty(residuals: &[f64], tau_x: &[f64], nu2: f64, delta: f64) -> Vec<f64> {
    residuals
        .iter()
        .zip(tau_x)
        .map(|(&r, &t)| certainty(posterior_e(r, t, nu2).clamp(delta, 1.0 - delta)))
        .collect()
}

/// Mean gap and variance sum of the observed-minus-randomized AIPW
/// statistic in its Gaussian limit.
///
/// With `Wⱼ = 4[Yⱼ − μ(Xⱼ)]`, the gap is `2 Σ sign(τⱼ)|rⱼ|Cⱼ` and the
/// variance sum is `4 Σ rⱼ²(2 − Cⱼ²)`.
pub fn gaussian_moments(residuals: &[f64], tau_x: &[f64], nu2: f64, delta: f64) -> (f64, f64) {
    let c = clipped_certainty(residuals, tau_x, nu2, delta);
    let mut gap = 0.0;
    let mut var = 0.0;
    for j in 0..residuals.len() {
        let r = residuals[j];
        gap += 2.0 * sign(tau_x[j]) * r.abs() * c[j];
        var += 4.0 * r * r * (2.0 - c[j] * c[j]);
    }
    (gap, var)
}

/// Gaussian approximation `1 − Φ(gap / √var)` of the assignment-marginalized
/// randomization p-value. Diagnostic only.
pub fn gaussian_approx_pvalue(residuals: &[f64], tau_x: &[f64], nu2: f64, delta: f64) -> f64 {
    let (gap, var) = gaussian_moments(residuals, tau_x, nu2, delta);
    if var <= 0.0 {
        return if gap == 0.0 {
            0.5
        } else if gap > 0.0 {
            0.0
        } else {
            1.0
        };
    }
    1.0 - normal_cdf(gap / var.sqrt())
}

/// Fractional knapsack `max Σ wᵢaᵢ` s.t. `Σ wᵢbᵢ ≤ budget`, `w ∈ [0,1]^m`,
/// with `bᵢ > 0`. Items with `aᵢ ≤ 0` are never taken; the rest are taken
/// greedily by decreasing `aᵢ/bᵢ` (ties by lowest index), the boundary item
/// fractionally.
pub fn fractional_knapsack(a: &[f64], b: &[f64], budget: f64) -> Result<Vec<f64>> {
    if !(budget > 0.0) {
        return Err(Error::NonPositiveBudget);
    }
    let mut order: Vec<usize> = (0..a.len()).filter(|&i| a[i] > 0.0).collect();
    order.sort_by(|&i, &j| (a[j] / b[j]).total_cmp(&(a[i] / b[i])).then(i.cmp(&j)));
    let mut w = vec![0.0; a.len()];
    let mut remaining = budget;
    for i in order {
        if b[i] <= remaining {
            w[i] = 1.0;
            remaining -= b[i];
        } else {
            w[i] = remaining / b[i];
            break;
        }
    }
    Ok(w)
}

/// Threshold-form maximizer of the soft-inclusion objective for one
/// subgroup at a fixed variance budget:
/// `aⱼ = sign(τⱼ)|rⱼ|Cⱼ`, `bⱼ = rⱼ²(2 − Cⱼ²)`.
pub fn optimal_soft_inclusion(
    residuals: &[f64],
    tau_x: &[f64],
    nu2: f64,
    budget: f64,
) -> Result<Vec<f64>> {
    let (a, b) = soft_inclusion_items(residuals, tau_x, nu2);
    fractional_knapsack(&a, &b, budget)
}

/// Knapsack item values and costs behind [`optimal_soft_inclusion`].
pub fn soft_inclusion_items(residuals: &[f64], tau_x: &[f64], nu2: f64) -> (Vec<f64>, Vec<f64>) {
    let mut a = Vec::with_capacity(residuals.len());
    let mut b = Vec::with_capacity(residuals.len());
    for (&r, &t) in residuals.iter().zip(tau_x) {
        let c = certainty(posterior_e(r, t, nu2));
        a.push(sign(t) * r.abs() * c);
        b.push(r * r * (2.0 - c * c));
    }
    (a, b)
}
