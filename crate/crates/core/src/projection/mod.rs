//! Two-dimensional layout of units for the projection view: Gower
//! dissimilarities embedded by non-metric MDS.

mod gower;
mod nmds;

pub use gower::{gower_distance, gower_distance_rows, DistanceMatrix};
pub use nmds::{kruskal_stress, nmds, NmdsParams, ProjectionLayout};

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::ObservationalDataset;
use crate::mask::UnitMask;

pub const DEFAULT_POINT_CAP: usize = 5000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProjectionError {
    #[error("projection needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("invalid distance matrix: {0}")]
    InvalidDistances(String),
    #[error("invalid projection parameters: {0}")]
    InvalidParams(String),
}

/// Up to `cap` row indices, sampled so each stratum keeps its share
/// (largest-remainder rounding). Sorted ascending; everything when the
/// input fits.
pub fn stratified_subsample(strata: &[usize], cap: usize, seed: u64) -> Vec<usize> {
    let n = strata.len();
    if n <= cap {
        return (0..n).collect();
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &s) in strata.iter().enumerate() {
        groups.entry(s).or_default().push(i);
    }
    let groups: Vec<Vec<usize>> = groups.into_values().collect();
    let quotas: Vec<f64> = groups.iter().map(|g| cap as f64 * g.len() as f64 / n as f64).collect();
    let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut left = cap - alloc.iter().sum::<usize>();
    let mut by_remainder: Vec<usize> = (0..groups.len()).collect();
    by_remainder.sort_by(|&a, &b| {
        (quotas[b] - quotas[b].floor())
            .total_cmp(&(quotas[a] - quotas[a].floor()))
            .then(a.cmp(&b))
    });
    for k in by_remainder {
        if left == 0 {
            break;
        }
        if alloc[k] < groups[k].len() {
            alloc[k] += 1;
            left -= 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<usize> = groups
        .iter()
        .zip(&alloc)
        .flat_map(|(g, &k)| sample(&mut rng, g.len(), k).into_iter().map(|j| g[j]).collect::<Vec<_>>())
        .collect();
    out.sort_unstable();
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutPoint {
    pub id: u64,
    pub x: f64,
    pub y: f64,
    /// Ids of the supplied subgroups that cover this unit.
    pub subgroups: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutReport {
    pub points: Vec<LayoutPoint>,
    pub stress: f64,
    pub iterations: usize,
    /// Units in the dataset; `points` is smaller when subsampled.
    pub n_total: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Projects the dataset's units to 2-D, subsampling to `cap` units with
/// strata defined by subgroup membership.
pub fn project_dataset(
    dataset: &ObservationalDataset,
    memberships: &[(String, UnitMask)],
    params: &NmdsParams,
    cap: usize,
) -> Result<LayoutReport, ProjectionError> {
    if params.dims != 2 {
        return Err(ProjectionError::InvalidParams(format!(
            "the layout report is two-dimensional, got dims {}",
            params.dims
        )));
    }
    let n = dataset.n();
    let mut signature_ids: BTreeMap<Vec<bool>, usize> = BTreeMap::new();
    let strata: Vec<usize> = (0..n)
        .map(|i| {
            let sig: Vec<bool> = memberships.iter().map(|(_, m)| m.contains(i)).collect();
            let next = signature_ids.len();
            *signature_ids.entry(sig).or_insert(next)
        })
        .collect();
    let rows = stratified_subsample(&strata, cap, params.seed);
    let distances = gower_distance_rows(dataset, &rows)?;
    let layout = nmds(&distances, params)?;
    let points = rows
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            let p = layout.point(k);
            LayoutPoint {
                id: dataset.ids()[i],
                x: p[0],
                y: p[1],
                subgroups: memberships
                    .iter()
                    .filter(|(_, m)| m.contains(i))
                    .map(|(id, _)| id.clone())
                    .collect(),
            }
        })
        .collect();
    Ok(LayoutReport {
        points,
        stress: layout.final_stress,
        iterations: layout.iterations_run,
        n_total: n,
        warning: layout.warning,
    })
}
