//! Family-wise error control over subgroup p-values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::chi_square_sf;

/// Largest family handled by exhaustive closed testing.
pub const MAX_CLOSED_TESTING: usize = 20;

/// Hypotheses rejected by a multiple-testing rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionSet {
    pub rejected: Vec<usize>,
    pub level: f64,
    pub method: String,
}

impl RejectionSet {
    pub fn contains(&self, k: usize) -> bool {
        self.rejected.contains(&k)
    }

    pub fn is_empty(&self) -> bool {
        self.rejected.is_empty()
    }
}

fn check_pvalues(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::EmptyInput("p-values"));
    }
    if let Some(&bad) = p.iter().find(|&&v| !(v > 0.0 && v <= 1.0)) {
        return Err(Error::InvalidPValue(bad));
    }
    Ok(())
}

/// Fisher's combination: `−2 Σ ln pᵢ` referred to `χ²_{2m}`.
pub fn fisher_combine(pvals: &[f64]) -> Result<f64> {
    check_pvalues(pvals)?;
    let stat: f64 = -2.0 * pvals.iter().map(|p| p.ln()).sum::<f64>();
    Ok(chi_square_sf(stat, 2.0 * pvals.len() as f64))
}

/// Bonferroni global test `min(1, m·min pᵢ)`.
pub fn bonferroni_combine(pvals: &[f64]) -> Result<f64> {
    check_pvalues(pvals)?;
    let min = pvals.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((min * pvals.len() as f64).min(1.0))
}

/// Global tests available to [`closed_testing`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GlobalTest {
    Fisher,
    Bonferroni,
}

impl GlobalTest {
    pub fn combine(self, pvals: &[f64]) -> Result<f64> {
        match self {
            Self::Fisher => fisher_combine(pvals),
            Self::Bonferroni => bonferroni_combine(pvals),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Self::Fisher => "closed-testing-fisher",
            Self::Bonferroni => "closed-testing-bonferroni",
        }
    }
}

/// Closed testing: rejects `k` iff every intersection hypothesis containing
/// `k` is rejected by `global` at level `q`.
pub fn closed_testing(pvals: &[f64], q: f64, global: GlobalTest) -> Result<RejectionSet> {
    check_pvalues(pvals)?;
    let k = pvals.len();
    if k > MAX_CLOSED_TESTING {
        return Err(Error::TooManyHypotheses {
            k,
            max: MAX_CLOSED_TESTING,
        });
    }
    let full = (1u32 << k) - 1;
    // bit k set ⇔ some subset containing k is not rejected
    let mut survives = 0u32;
    let mut subset = Vec::with_capacity(k);
    for mask in 1..=full {
        if mask & !survives == 0 {
            continue;
        }
        subset.clear();
        subset.extend((0..k).filter(|&i| mask >> i & 1 == 1).map(|i| pvals[i]));
        if global.combine(&subset)? > q {
            survives |= mask;
        }
    }
    Ok(RejectionSet {
        rejected: (0..k).filter(|&i| survives >> i & 1 == 0).collect(),
        level: q,
        method: global.name().into(),
    })
}

/// Holm's step-down procedure.
pub fn holm(pvals: &[f64], q: f64) -> Result<RejectionSet> {
    check_pvalues(pvals)?;
    let k = pvals.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| pvals[a].total_cmp(&pvals[b]).then(a.cmp(&b)));
    let mut rejected = Vec::new();
    for (rank, &i) in order.iter().enumerate() {
        if pvals[i] <= q / (k - rank) as f64 {
            rejected.push(i);
        } else {
            break;
        }
    }
    rejected.sort_unstable();
    Ok(RejectionSet {
        rejected,
        level: q,
        method: "holm".into(),
    })
}
