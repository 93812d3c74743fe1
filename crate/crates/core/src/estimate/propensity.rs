//! Propensity scores from an L2-penalized logistic regression of the
//! treatment on the binary atom features, fit by Newton-Raphson (IRLS).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::EstimateError;
use crate::dataset::{Binarized, ObservationalDataset};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PropensityParams {
    /// Ridge penalty on the atom coefficients (intercept unpenalized),
    /// applied to the mean log-likelihood.
    pub l2: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub clip_lo: f64,
    pub clip_hi: f64,
}

impl Default for PropensityParams {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            max_iter: 200,
            tol: 1e-8,
            clip_lo: 0.01,
            clip_hi: 0.99,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    pub intercept: f64,
    /// One coefficient per atom.
    pub coefficients: Vec<f64>,
    /// Clipped score per unit row.
    pub scores: Vec<f64>,
    pub clip_lo: f64,
    pub clip_hi: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl PropensityModel {
    /// A model with fixed scores, for callers that already know them.
    pub fn from_scores(scores: Vec<f64>, clip_lo: f64, clip_hi: f64) -> Self {
        let scores = scores.into_iter().map(|e| e.clamp(clip_lo, clip_hi)).collect();
        Self {
            intercept: 0.0,
            coefficients: Vec::new(),
            scores,
            clip_lo,
            clip_hi,
            converged: true,
            iterations: 0,
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(z)) without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn fit_propensity(
    dataset: &ObservationalDataset,
    binarized: &Binarized,
    params: &PropensityParams,
) -> Result<PropensityModel, EstimateError> {
    let n = dataset.n();
    let d = binarized.schema.d();
    if binarized.matrix.rows() != n {
        return Err(EstimateError::DimensionMismatch {
            got: binarized.matrix.rows(),
            expected: n,
        });
    }
    if !(0.0 < params.clip_lo && params.clip_lo < params.clip_hi && params.clip_hi < 1.0) {
        return Err(EstimateError::InvalidParams(format!(
            "clip bounds must satisfy 0 < lo < hi < 1, got ({}, {})",
            params.clip_lo, params.clip_hi
        )));
    }
    let n_treated = dataset.n_treated();
    if n_treated == 0 || n_treated == n {
        return Err(EstimateError::SingleClass);
    }

    // active feature indices per unit: 0 is the intercept, atom j is j + 1
    let n_cov = binarized.schema.n_covariates();
    let active: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut a = Vec::with_capacity(n_cov + 1);
            a.push(0);
            for c in 0..n_cov {
                a.push(binarized.schema.covariate_atoms(c).start + binarized.matrix.code(c, i) + 1);
            }
            a
        })
        .collect();
    let t: Vec<f64> = dataset
        .treated()
        .iter()
        .map(|&x| if x { 1.0 } else { 0.0 })
        .collect();
    let p = d + 1;
    let inv_n = 1.0 / n as f64;

    let linear = |beta: &DVector<f64>, i: usize| -> f64 { active[i].iter().map(|&k| beta[k]).sum() };
    let objective = |beta: &DVector<f64>| -> f64 {
        let ll: f64 = (0..n)
            .map(|i| {
                let z = linear(beta, i);
                t[i] * z - softplus(z)
            })
            .sum();
        let penalty: f64 = beta.iter().skip(1).map(|b| b * b).sum();
        ll * inv_n - 0.5 * params.l2 * penalty
    };

    let mut beta = DVector::<f64>::zeros(p);
    let base = n_treated as f64 / n as f64;
    beta[0] = (base / (1.0 - base)).ln();
    let mut current = objective(&beta);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < params.max_iter {
        iterations += 1;
        let mut hess = DMatrix::<f64>::zeros(p, p);
        let mut grad = DVector::<f64>::zeros(p);
        for i in 0..n {
            let mu = sigmoid(linear(&beta, i));
            let w = mu * (1.0 - mu) * inv_n;
            let r = (t[i] - mu) * inv_n;
            for &a in &active[i] {
                grad[a] += r;
                for &b in &active[i] {
                    hess[(a, b)] += w;
                }
            }
        }
        for k in 1..p {
            grad[k] -= params.l2 * beta[k];
            hess[(k, k)] += params.l2;
        }
        let step = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => {
                // tiny ridge on the intercept too when the system is singular
                for k in 0..p {
                    hess[(k, k)] += 1e-10;
                }
                match hess.cholesky() {
                    Some(ch) => ch.solve(&grad),
                    None => break,
                }
            }
        };

        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let candidate = &beta + &step * scale;
            let value = objective(&candidate);
            if value >= current {
                accepted = Some((candidate, value));
                break;
            }
            scale *= 0.5;
        }
        let Some((candidate, value)) = accepted else {
            converged = true;
            break;
        };
        let max_step = (&step * scale).amax();
        let improvement = value - current;
        beta = candidate;
        current = value;
        if max_step < params.tol || improvement < params.tol * (current.abs() + params.tol) {
            converged = true;
            break;
        }
    }

    let scores = (0..n)
        .map(|i| sigmoid(linear(&beta, i)).clamp(params.clip_lo, params.clip_hi))
        .collect();
    Ok(PropensityModel {
        intercept: beta[0],
        coefficients: beta.iter().skip(1).copied().collect(),
        scores,
        clip_lo: params.clip_lo,
        clip_hi: params.clip_hi,
        converged,
        iterations,
    })
}
