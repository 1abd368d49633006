#![allow(dead_code)]

//! Brute-force reference implementations for the test suite.
//!
//! Nothing here calls into the library's estimators or tests: inputs are
//! plain vectors and every quantity is recomputed from its definition.

#![allow(dead_code)]

/// Result of an oracle computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleResult {
    pub value: f64,
    pub method: &'static str,
    pub tolerance: f64,
}

pub const MAX_ENUMERATION: usize = 20;
pub const MAX_GRID_ITEMS: usize = 6;

/// Difference in means in the `2/m · Σ (2z − 1) y` form.
pub fn dm_statistic(y: &[f64], z: &[u8]) -> f64 {
    let m = y.len() as f64;
    let s: f64 = y
        .iter()
        .zip(z)
        .map(|(&yi, &zi)| if zi == 1 { yi } else { -yi })
        .sum();
    s * 2.0 / m
}

/// Averaged AIPW statistic from per-unit outcome and CATE predictions.
pub fn aipw_statistic(y: &[f64], z: &[u8], e: &[f64], mu: &[f64], tau: &[f64]) -> f64 {
    let mut total = 0.0;
    for j in 0..y.len() {
        let m1 = mu[j] + (1.0 - e[j]) * tau[j];
        let m0 = mu[j] - e[j] * tau[j];
        let score = if z[j] == 1 {
            (y[j] - m1) / e[j] + tau[j]
        } else {
            -(y[j] - m0) / (1.0 - e[j]) + tau[j]
        };
        total += score;
    }
    total / y.len() as f64
}

/// Exact randomization p-value `P̃{T(Z̃) ≥ T(z_obs)}` by enumerating every
/// assignment vector as a bitmask, most significant bit first.
pub fn enumerate_pvalue<F>(stat: F, z_obs: &[u8], e: &[f64]) -> Result<OracleResult, String>
where
    F: Fn(&[u8]) -> f64,
{
    let m = z_obs.len();
    if m > MAX_ENUMERATION {
        return Err(format!("{m} units is too many to enumerate"));
    }
    let observed = stat(z_obs);
    let half = e.iter().all(|&p| p == 0.5);
    let mut hits: u64 = 0;
    let mut mass = 0.0;
    let mut z = vec![0u8; m];
    for mask in 0..(1u64 << m) {
        let mut prob = 1.0;
        for j in 0..m {
            z[j] = ((mask >> (m - 1 - j)) & 1) as u8;
            prob *= if z[j] == 1 { e[j] } else { 1.0 - e[j] };
        }
        if stat(&z) >= observed {
            hits += 1;
            mass += prob;
        }
    }
    let value = if half {
        hits as f64 / (1u64 << m) as f64
    } else {
        mass
    };
    Ok(OracleResult {
        value,
        method: "enumeration",
        tolerance: 0.0,
    })
}

/// Solves `M v = b` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut m: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let p = b.len();
    for col in 0..p {
        let piv = (col..p)
            .max_by(|&a, &c| m[a][col].abs().total_cmp(&m[c][col].abs()))
            .unwrap();
        m.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..p {
            let f = m[r][col] / m[col][col];
            for c in col..p {
                m[r][c] -= f * m[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut v = vec![0.0; p];
    for r in (0..p).rev() {
        let mut s = b[r];
        for c in r + 1..p {
            s -= m[r][c] * v[c];
        }
        v[r] = s / m[r][r];
    }
    v
}

fn augmented(x: &[f64]) -> Vec<f64> {
    std::iter::once(1.0).chain(x.iter().copied()).collect()
}

/// Weighted least squares of `t` on `[1, x]` with optional ridge on every
/// coefficient.
pub fn wls(rows: &[Vec<f64>], t: &[f64], w: &[f64], ridge: f64) -> Vec<f64> {
    let p = rows[0].len() + 1;
    let mut m = vec![vec![0.0; p]; p];
    let mut b = vec![0.0; p];
    for ((row, &ti), &wi) in rows.iter().zip(t).zip(w) {
        let a = augmented(row);
        for r in 0..p {
            b[r] += wi * a[r] * ti;
            for c in 0..p {
                m[r][c] += wi * a[r] * a[c];
            }
        }
    }
    for (i, r) in m.iter_mut().enumerate() {
        r[i] += ridge;
    }
    gauss_solve(m, b)
}

/// Inverse of a small dense matrix by Gauss–Jordan elimination.
pub fn invert(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let p = m.len();
    let mut cols = Vec::with_capacity(p);
    for c in 0..p {
        let mut unit = vec![0.0; p];
        unit[c] = 1.0;
        cols.push(gauss_solve(m.to_vec(), unit));
    }
    (0..p).map(|r| (0..p).map(|c| cols[c][r]).collect()).collect()
}

/// `xᵢᵀ (XᵀX)⁻² xᵢ` from an explicit inverse.
pub fn diversity_oracle(rows: &[Vec<f64>]) -> Vec<f64> {
    let d = rows[0].len();
    let mut g = vec![vec![0.0; d]; d];
    for row in rows {
        for r in 0..d {
            for c in 0..d {
                g[r][c] += row[r] * row[c];
            }
        }
    }
    let inv = invert(&g);
    rows.iter()
        .map(|row| {
            (0..d)
                .map(|r| {
                    let v: f64 = (0..d).map(|c| inv[r][c] * row[c]).sum();
                    v * v
                })
                .sum()
        })
        .collect()
}

/// Inputs of the BaR objective.
pub struct BarProblem<'a> {
    pub rows: &'a [Vec<f64>],
    pub y: &'a [f64],
    pub z: &'a [u8],
    pub e: &'a [f64],
    pub in_fold: &'a [bool],
    pub mu: &'a [f64],
    pub e_hat: &'a [f64],
    pub lambda: f64,
}

impl BarProblem<'_> {
    /// Squared-error terms `(weight, residual, slope)` such that the loss is
    /// `Σ weight·(residual − slope·τ(x))²`, read off the objective: the full
    /// R-learner loss on the fold plus `λ` times the loss marginalized over
    /// `Z ~ Bern(ê)` elsewhere.
    fn terms(&self) -> Vec<(usize, f64, f64, f64)> {
        let mut out = Vec::new();
        for i in 0..self.y.len() {
            let r = self.y[i] - self.mu[i];
            if self.in_fold[i] {
                out.push((i, 1.0, r, f64::from(self.z[i]) - self.e[i]));
            } else {
                out.push((i, self.lambda * self.e_hat[i], r, 1.0 - self.e[i]));
                out.push((i, self.lambda * (1.0 - self.e_hat[i]), r, -self.e[i]));
            }
        }
        out
    }

    pub fn loss(&self, beta: &[f64]) -> f64 {
        self.terms()
            .iter()
            .map(|&(i, w, r, s)| {
                let tau: f64 = augmented(&self.rows[i]).iter().zip(beta).map(|(a, b)| a * b).sum();
                w * (r - s * tau).powi(2)
            })
            .sum()
    }
}

/// Cyclic coordinate descent with exact coordinate minimization, from zero,
/// until one sweep lowers the loss by less than `1e-12`.
///
/// Coordinates are taken on the centered, unit-scaled covariates so that the
/// intercept is not collinear with them; the result is mapped back to the
/// raw parametrization.
pub fn minimize_bar_loss(problem: &BarProblem<'_>) -> MinimizerResult {
    let d = problem.rows[0].len();
    let p = d + 1;
    let m = problem.rows.len() as f64;
    let center: Vec<f64> = (0..d).map(|c| problem.rows.iter().map(|r| r[c]).sum::<f64>() / m).collect();
    let scale: Vec<f64> = (0..d)
        .map(|c| {
            let v = problem.rows.iter().map(|r| (r[c] - center[c]).powi(2)).sum::<f64>() / m;
            if v > 0.0 { v.sqrt() } else { 1.0 }
        })
        .collect();
    let design: Vec<Vec<f64>> = problem
        .rows
        .iter()
        .map(|r| std::iter::once(1.0).chain((0..d).map(|c| (r[c] - center[c]) / scale[c])).collect())
        .collect();
    let to_raw = |gamma: &[f64]| -> Vec<f64> {
        let mut beta = vec![0.0; p];
        beta[0] = gamma[0];
        for c in 0..d {
            beta[c + 1] = gamma[c + 1] / scale[c];
            beta[0] -= gamma[c + 1] * center[c] / scale[c];
        }
        beta
    };
    let terms = problem.terms();
    let mut gamma = vec![0.0; p];
    let mut fitted: Vec<f64> = vec![0.0; problem.rows.len()];
    let mut loss = problem.loss(&to_raw(&gamma));
    let mut sweeps = 0;
    loop {
        for c in 0..p {
            let (mut g, mut h) = (0.0, 0.0);
            for &(i, w, r, s) in &terms {
                let a = design[i][c];
                g += -2.0 * w * s * a * (r - s * fitted[i]);
                h += 2.0 * w * s * s * a * a;
            }
            if h > 0.0 {
                let step = -g / h;
                gamma[c] += step;
                for i in 0..fitted.len() {
                    fitted[i] += step * design[i][c];
                }
            }
        }
        sweeps += 1;
        let next = problem.loss(&to_raw(&gamma));
        let done = (loss - next).abs() < 1e-12 || sweeps > 1_000_000;
        loss = next;
        if done {
            break;
        }
    }
    MinimizerResult { beta: to_raw(&gamma), loss, sweeps }
}

#[derive(Debug, Clone)]
pub struct MinimizerResult {
    pub beta: Vec<f64>,
    pub loss: f64,
    pub sweeps: usize,
}

/// Best `Σ aᵢξᵢ` over `ξ ∈ {0, 0.1, …, 1}^m` with `Σ bᵢξᵢ ≤ budget`.
pub fn knapsack_grid(a: &[f64], b: &[f64], budget: f64) -> Result<OracleResult, String> {
    let m = a.len();
    if m > MAX_GRID_ITEMS {
        return Err(format!("{m} items is too many for the grid"));
    }
    let mut best = 0.0f64;
    let mut idx = vec![0usize; m];
    loop {
        let cost: f64 = (0..m).map(|i| b[i] * idx[i] as f64 / 10.0).sum();
        if cost <= budget + 1e-12 {
            let value: f64 = (0..m).map(|i| a[i] * idx[i] as f64 / 10.0).sum();
            best = best.max(value);
        }
        let mut pos = 0;
        loop {
            if pos == m {
                return Ok(OracleResult {
                    value: best,
                    method: "grid",
                    tolerance: 0.1,
                });
            }
            idx[pos] += 1;
            if idx[pos] <= 10 {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

/// Logistic function.
pub fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Monte-Carlo estimate of `E‖β_I − β_[n]‖²`, where `β_[n]` is the
/// full-assignment R-learner and `β_I` the BaR fit (λ = 1, Bern(1/2)
/// design) with the true posterior, redrawing held-out assignments from that
/// posterior. Returns `(mean, standard error)`.
pub fn mc_beta_distance(
    rows: &[Vec<f64>],
    y: &[f64],
    z_fold: &[u8],
    in_fold: &[bool],
    mu: &[f64],
    posterior: &[f64],
    draws: usize,
    seed: u64,
) -> (f64, f64) {
    let n = y.len();
    let e = vec![0.5; n];
    let bar = {
        let problem = BarProblem {
            rows,
            y,
            z: z_fold,
            e: &e,
            in_fold,
            mu,
            e_hat: posterior,
            lambda: 1.0,
        };
        let terms = problem.terms();
        let mut rows_t = Vec::new();
        let mut targets = Vec::new();
        let mut weights = Vec::new();
        for (i, w, r, s) in terms {
            rows_t.push(rows[i].clone());
            targets.push(r / s);
            weights.push(w * s * s);
        }
        wls(&rows_t, &targets, &weights, 0.0)
    };
    let mut state = seed ^ 0x9e37_79b9_7f4a_7c15;
    let mut next_uniform = move || {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    let mut values = Vec::with_capacity(draws);
    let mut z = z_fold.to_vec();
    for _ in 0..draws {
        for j in 0..n {
            if !in_fold[j] {
                z[j] = u8::from(next_uniform() < posterior[j]);
            }
        }
        let targets: Vec<f64> = (0..n)
            .map(|i| (y[i] - mu[i]) / (f64::from(z[i]) - 0.5))
            .collect();
        let full = wls(rows, &targets, &vec![1.0; n], 0.0);
        values.push(full.iter().zip(&bar).map(|(a, b)| (a - b).powi(2)).sum::<f64>());
    }
    let mean = values.iter().sum::<f64>() / draws as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws as f64 - 1.0);
    (mean, (var / draws as f64).sqrt())
}
