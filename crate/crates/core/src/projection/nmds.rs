use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gower::DistanceMatrix;
use super::ProjectionError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NmdsParams {
    pub dims: usize,
    pub max_iter: usize,
    /// Stop once an iteration lowers stress-1 by less than this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for NmdsParams {
    fn default() -> Self {
        Self {
            dims: 2,
            max_iter: 300,
            tol: 1e-6,
            seed: 42,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionLayout {
    pub dims: usize,
    /// Row-major `n x dims`.
    pub coords: Vec<f64>,
    pub final_stress: f64,
    pub iterations_run: usize,
    /// Stress-1 of the initial layout followed by one entry per iteration.
    pub stress_history: Vec<f64>,
    pub warning: Option<String>,
}

impl ProjectionLayout {
    pub fn n(&self) -> usize {
        self.coords.len() / self.dims.max(1)
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dims..(i + 1) * self.dims]
    }
}

/// Point pairs sorted by dissimilarity, with tie blocks, fixed for a run.
/// Per-pair vectors (`d`, `dhat`) are kept in this order.
struct Ranking {
    pairs: Vec<(u32, u32)>,
    /// End index of each run of equal dissimilarities.
    ends: Vec<u32>,
}

impl Ranking {
    fn new(delta: &[f64], n: usize) -> Self {
        let mut keyed: Vec<(f64, u32, u32)> = Vec::with_capacity(delta.len());
        let mut p = 0;
        for i in 0..n as u32 {
            for j in (i + 1)..n as u32 {
                keyed.push((delta[p], i, j));
                p += 1;
            }
        }
        keyed.par_sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
        let ends = (1..=keyed.len())
            .filter(|&k| k == keyed.len() || keyed[k].0 != keyed[k - 1].0)
            .map(|k| k as u32)
            .collect();
        Self {
            pairs: keyed.into_iter().map(|(_, i, j)| (i, j)).collect(),
            ends,
        }
    }

    /// Least-squares monotone fit of `d`; tied dissimilarities share one
    /// fitted value.
    fn disparities(&self, d: &[f64]) -> Vec<f64> {
        // pool-adjacent-violators over the tie blocks
        let mut pools: Vec<(f64, f64, usize)> = Vec::new();
        let mut s = 0;
        for &e in &self.ends {
            let e = e as usize;
            let mut cur = (d[s..e].iter().sum::<f64>(), (e - s) as f64, e);
            s = e;
            // weights are positive, so compare means by cross-multiplying
            while let Some(&(ps, pw, _)) = pools.last() {
                if ps * cur.1 > cur.0 * pw {
                    pools.pop();
                    cur = (cur.0 + ps, cur.1 + pw, cur.2);
                } else {
                    break;
                }
            }
            pools.push(cur);
        }
        let mut out = Vec::with_capacity(d.len());
        for (sum, w, end) in pools {
            out.resize(end, sum / w);
        }
        out
    }

    fn distances(&self, coords: &[f64], dims: usize) -> Vec<f64> {
        self.pairs
            .par_iter()
            .map(|&(i, j)| {
                let xi = &coords[i as usize * dims..(i as usize + 1) * dims];
                let xj = &coords[j as usize * dims..(j as usize + 1) * dims];
                xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
            })
            .collect()
    }
}

fn stress_of(d: &[f64], dhat: &[f64]) -> f64 {
    let (num, den) = d
        .iter()
        .zip(dhat)
        .fold((0.0, 0.0), |(num, den), (a, b)| (num + (a - b) * (a - b), den + a * a));
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        1.0
    }
}

/// Kruskal stress-1 of a layout: `sqrt(sum (d - dhat)^2 / sum d^2)` with
/// `dhat` the monotone regression of the layout distances on the
/// dissimilarities, ties sharing a value.
pub fn kruskal_stress(distances: &DistanceMatrix, coords: &[f64], dims: usize) -> f64 {
    let ranking = Ranking::new(distances.condensed(), distances.n());
    let d = ranking.distances(coords, dims);
    stress_of(&d, &ranking.disparities(&d))
}

fn rescale(coords: &mut [f64], d: &mut [f64], target_ss: f64) {
    let ss: f64 = d.iter().map(|v| v * v).sum();
    if ss > 0.0 {
        let f = (target_ss / ss).sqrt();
        coords.iter_mut().for_each(|c| *c *= f);
        d.iter_mut().for_each(|v| *v *= f);
    }
}

/// `A v` for each column `v`, with `A_ij = delta_ij^2`, in one pass over
/// the condensed pairs.
fn sq_matvec(delta: &[f64], n: usize, vs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; n]; vs.len()];
    let mut p = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            let a = delta[p] * delta[p];
            p += 1;
            for (o, v) in out.iter_mut().zip(vs) {
                o[i] += a * v[j];
                o[j] += a * v[i];
            }
        }
    }
    out
}

fn center(v: &mut [f64]) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
}

/// `B v` for each column, with `B = -1/2 J A J` the double-centred squared
/// dissimilarities.
fn b_matvec(delta: &[f64], n: usize, vs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let centred: Vec<Vec<f64>> = vs
        .iter()
        .map(|v| {
            let mut c = v.clone();
            center(&mut c);
            c
        })
        .collect();
    let mut out = sq_matvec(delta, n, &centred);
    for o in &mut out {
        center(o);
        o.iter_mut().for_each(|x| *x *= -0.5);
    }
    out
}

fn orthonormalize(cols: &mut [Vec<f64>]) {
    for k in 0..cols.len() {
        for prev in 0..k {
            let dot: f64 = cols[k].iter().zip(&cols[prev]).map(|(a, b)| a * b).sum();
            let (head, tail) = cols.split_at_mut(k);
            tail[0].iter_mut().zip(&head[prev]).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = cols[k].iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 0.0 {
            cols[k].iter_mut().for_each(|a| *a /= norm);
        }
    }
}

/// Classical scaling start: the top `dims` eigenpairs of the double-centred
/// squared dissimilarities, from seeded subspace iteration. A dimension
/// with no spread gets a tiny seeded perturbation so later updates can use
/// it.
fn classical_start(delta: &[f64], n: usize, dims: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut row_sums = vec![0.0; n];
    let mut p = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            let a = delta[p] * delta[p];
            p += 1;
            row_sums[i] += a;
            row_sums[j] += a;
        }
    }
    // Gershgorin bound, so the shifted operator is positive semidefinite
    let shift = row_sums.iter().copied().fold(0.0, f64::max) * 0.5;
    let mut q: Vec<Vec<f64>> = (0..dims)
        .map(|_| {
            let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
            center(&mut v);
            v
        })
        .collect();
    orthonormalize(&mut q);
    for _ in 0..200 {
        let mut next = b_matvec(delta, n, &q);
        for (bv, v) in next.iter_mut().zip(&q) {
            bv.iter_mut().zip(v).for_each(|(a, b)| *a += shift * b);
        }
        orthonormalize(&mut next);
        let change: f64 = next
            .iter()
            .zip(&q)
            .map(|(a, b)| {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                1.0 - dot.abs()
            })
            .fold(0.0, f64::max);
        q = next;
        if change < 1e-12 {
            break;
        }
    }
    // Rayleigh-Ritz on the subspace
    let bq = b_matvec(delta, n, &q);
    let small = DMatrix::from_fn(dims, dims, |a, b| {
        q[a].iter().zip(&bq[b]).map(|(x, y)| x * y).sum::<f64>()
    });
    let small = (&small + small.transpose()) * 0.5;
    let eig = SymmetricEigen::new(small);
    let mut idx: Vec<usize> = (0..dims).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[idx[0]].max(0.0);
    let mut coords = vec![0.0; n * dims];
    for (k, &e) in idx.iter().enumerate() {
        let lambda = eig.eigenvalues[e];
        let scale = lambda.max(0.0).sqrt();
        let flat = lambda <= 1e-9 * top;
        for i in 0..n {
            let v: f64 = (0..dims).map(|a| q[a][i] * eig.eigenvectors[(a, e)]).sum();
            coords[i * dims + k] = if flat {
                let noise: f64 = StandardNormal.sample(rng);
                1e-4 * (top / n as f64).sqrt().max(1e-12) * noise
            } else {
                v * scale
            };
        }
    }
    coords
}

/// One Guttman transform with unit weights: `X' = (1/n) B(X) X` where
/// `B(X)` has off-diagonal entries `-dhat_ij / d_ij`.
fn guttman(coords: &[f64], ranking: &Ranking, d: &[f64], dhat: &[f64], n: usize, dims: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * dims];
    for ((&(i, j), &dp), &hp) in ranking.pairs.iter().zip(d).zip(dhat) {
        if dp <= 0.0 {
            continue;
        }
        let b = hp / dp;
        let (i, j) = (i as usize * dims, j as usize * dims);
        for k in 0..dims {
            let diff = b * (coords[i + k] - coords[j + k]);
            out[i + k] += diff;
            out[j + k] -= diff;
        }
    }
    out.iter_mut().for_each(|v| *v /= n as f64);
    out
}

/// Non-metric MDS by alternating monotone regression and stress
/// majorization, started from classical scaling. A step that would raise
/// stress-1 is shortened until it does not, so the recorded stress never
/// increases.
pub fn nmds(distances: &DistanceMatrix, params: &NmdsParams) -> Result<ProjectionLayout, ProjectionError> {
    let n = distances.n();
    let dims = params.dims;
    if n < 3 {
        return Err(ProjectionError::TooFewPoints(n));
    }
    if dims == 0 || dims >= n {
        return Err(ProjectionError::InvalidParams(format!(
            "dims must lie in 1..{n}, got {dims}"
        )));
    }
    if !(params.tol >= 0.0) {
        return Err(ProjectionError::InvalidParams(format!("tol must be non-negative, got {}", params.tol)));
    }
    let delta = distances.condensed();
    if delta.iter().all(|&v| v == 0.0) {
        return Ok(ProjectionLayout {
            dims,
            coords: vec![0.0; n * dims],
            final_stress: 0.0,
            iterations_run: 0,
            stress_history: vec![0.0],
            warning: Some("all dissimilarities are zero; every point is at the origin".into()),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let ranking = Ranking::new(delta, n);
    let target = delta.len() as f64;

    let evaluate = |coords: &mut Vec<f64>| {
        let mut d = ranking.distances(coords, dims);
        rescale(coords, &mut d, target);
        let dhat = ranking.disparities(&d);
        let s = stress_of(&d, &dhat);
        (d, dhat, s)
    };

    let mut x = classical_start(delta, n, dims, &mut rng);
    let (mut d, mut dhat, mut s) = evaluate(&mut x);
    let mut history = vec![s];
    let mut iterations = 0;
    while iterations < params.max_iter && s > 1e-12 {
        let norm = (target / dhat.iter().map(|v| v * v).sum::<f64>()).sqrt();
        let scaled: Vec<f64> = dhat.iter().map(|v| v * norm).collect();
        let step = guttman(&x, &ranking, &d, &scaled, n, dims);
        let mut accepted = None;
        let mut t = 1.0;
        for _ in 0..30 {
            let mut cand: Vec<f64> = x.iter().zip(&step).map(|(a, b)| a + t * (b - a)).collect();
            let (cd, cdhat, cs) = evaluate(&mut cand);
            if cs <= s {
                accepted = Some((cand, cd, cdhat, cs));
                break;
            }
            t *= 0.5;
        }
        let Some((nx, nd, ndhat, ns)) = accepted else { break };
        iterations += 1;
        let gain = s - ns;
        x = nx;
        d = nd;
        dhat = ndhat;
        s = ns;
        history.push(s);
        if gain < params.tol {
            break;
        }
    }

    Ok(ProjectionLayout {
        dims,
        coords: x,
        final_stress: s,
        iterations_run: iterations,
        stress_history: history,
        warning: None,
    })
}
