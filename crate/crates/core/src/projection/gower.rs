use rayon::prelude::*;

use super::ProjectionError;
use crate::dataset::{Column, ObservationalDataset};

/// Symmetric dissimilarities with a zero diagonal, stored as the upper
/// triangle in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    /// Builds from the condensed upper triangle: `(0,1), (0,2), ..., (n-2,n-1)`.
    pub fn from_condensed(n: usize, data: Vec<f64>) -> Result<Self, ProjectionError> {
        if data.len() != n * n.saturating_sub(1) / 2 {
            return Err(ProjectionError::InvalidDistances(format!(
                "{} entries for {n} points",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(ProjectionError::InvalidDistances(format!(
                "entries must be finite and non-negative, found {v}"
            )));
        }
        Ok(Self { n, data })
    }

    /// Builds from a full square matrix, checking symmetry and the diagonal.
    pub fn from_square(rows: &[Vec<f64>]) -> Result<Self, ProjectionError> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(ProjectionError::InvalidDistances("matrix is not square".into()));
            }
            if row[i] != 0.0 {
                return Err(ProjectionError::InvalidDistances("non-zero diagonal".into()));
            }
            for j in (i + 1)..n {
                if row[j] != rows[j][i] {
                    return Err(ProjectionError::InvalidDistances("matrix is not symmetric".into()));
                }
                data.push(row[j]);
            }
        }
        Self::from_condensed(n, data)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn condensed(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        use std::cmp::Ordering::*;
        match i.cmp(&j) {
            Equal => 0.0,
            Less => self.data[condensed_index(self.n, i, j)],
            Greater => self.data[condensed_index(self.n, j, i)],
        }
    }
}

pub(crate) fn condensed_index(n: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n);
    i * n - i * (i + 1) / 2 + (j - i - 1)
}

/// Gower distance over all covariates of the given rows: categorical
/// covariates add a 0/1 mismatch, numerical ones `|a - b| / range`, and the
/// total is divided by the number of covariates. Treatment and outcome are
/// not used.
pub fn gower_distance_rows(
    dataset: &ObservationalDataset,
    rows: &[usize],
) -> Result<DistanceMatrix, ProjectionError> {
    let n = rows.len();
    if n < 2 {
        return Err(ProjectionError::TooFewPoints(n));
    }
    let p = dataset.columns().len();
    let ranges: Vec<f64> = dataset
        .columns()
        .iter()
        .map(|c| match c {
            Column::Numerical(v) => {
                let (lo, hi) = rows
                    .iter()
                    .map(|&i| v[i])
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
                hi - lo
            }
            Column::Categorical { .. } => 1.0,
        })
        .collect();
    let data: Vec<f64> = (0..n)
        .into_par_iter()
        .flat_map_iter(|a| {
            let ranges = &ranges;
            ((a + 1)..n).map(move |b| {
                let (i, j) = (rows[a], rows[b]);
                let total: f64 = dataset
                    .columns()
                    .iter()
                    .zip(ranges)
                    .map(|(c, &r)| match c {
                        Column::Categorical { codes, .. } => f64::from(u8::from(codes[i] != codes[j])),
                        Column::Numerical(v) if r > 0.0 => (v[i] - v[j]).abs() / r,
                        Column::Numerical(_) => 0.0,
                    })
                    .sum();
                if p == 0 {
                    0.0
                } else {
                    total / p as f64
                }
            })
        })
        .collect();
    DistanceMatrix::from_condensed(n, data)
}

pub fn gower_distance(dataset: &ObservationalDataset) -> Result<DistanceMatrix, ProjectionError> {
    let rows: Vec<usize> = (0..dataset.n()).collect();
    gower_distance_rows(dataset, &rows)
}
