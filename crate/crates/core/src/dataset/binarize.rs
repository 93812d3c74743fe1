use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{Column, DatasetError, ObservationalDataset};
use crate::mask::UnitMask;

/// Predicate of a single atom.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum AtomPredicate {
    /// Categorical value equality.
    Equals(String),
    /// Half-open interval `(lo, hi]`; the outermost atoms of a covariate
    /// are unbounded (`-inf` / `+inf`).
    Interval { lo: f64, hi: f64 },
}

impl AtomPredicate {
    pub fn holds_number(&self, x: f64) -> bool {
        match self {
            AtomPredicate::Interval { lo, hi } => *lo < x && x <= *hi,
            AtomPredicate::Equals(_) => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    /// Index of the source covariate in the dataset schema.
    pub covariate: usize,
    pub covariate_name: String,
    pub predicate: AtomPredicate,
}

impl std::fmt::Display for Atom {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.predicate {
            AtomPredicate::Equals(v) => write!(f, "{} = {}", self.covariate_name, v),
            AtomPredicate::Interval { lo, hi } => match (lo.is_finite(), hi.is_finite()) {
                (true, true) => write!(f, "{} < {} <= {}", lo, self.covariate_name, hi),
                (true, false) => write!(f, "{} > {}", self.covariate_name, lo),
                (false, true) => write!(f, "{} <= {}", self.covariate_name, hi),
                (false, false) => write!(f, "{} any", self.covariate_name),
            },
        }
    }
}

/// Ordered atoms: schema order, then value or interval order. The atoms of
/// one covariate are contiguous.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomSchema {
    atoms: Vec<Atom>,
    covariate_names: Vec<String>,
    ranges: Vec<Range<usize>>,
}

impl AtomSchema {
    pub fn d(&self) -> usize {
        self.atoms.len()
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn atom(&self, j: usize) -> &Atom {
        &self.atoms[j]
    }

    pub fn n_covariates(&self) -> usize {
        self.ranges.len()
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|c| c == name)
    }

    /// Atom indices belonging to covariate `c`.
    pub fn covariate_atoms(&self, c: usize) -> Range<usize> {
        self.ranges[c].clone()
    }

    /// Index of the atom `covariate = value`.
    pub fn find_value(&self, covariate: usize, value: &str) -> Option<usize> {
        self.covariate_atoms(covariate)
            .find(|&j| matches!(&self.atoms[j].predicate, AtomPredicate::Equals(v) if v == value))
    }
}

/// Per-unit atom truth values.
#[derive(Clone, Debug)]
pub struct BinaryAtomMatrix {
    n: usize,
    columns: Vec<UnitMask>,
    /// `codes[c][i]`: offset of the atom of covariate `c` that holds for unit `i`.
    codes: Vec<Vec<u32>>,
}

impl BinaryAtomMatrix {
    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn cols(&self) -> usize {
        self.columns.len()
    }

    pub fn bit(&self, i: usize, j: usize) -> bool {
        self.columns[j].contains(i)
    }

    /// Units for which atom `j` holds.
    pub fn atom_mask(&self, j: usize) -> &UnitMask {
        &self.columns[j]
    }

    /// Offset (within covariate `c`'s atom range) of the atom holding for unit `i`.
    pub fn code(&self, c: usize, i: usize) -> usize {
        self.codes[c][i] as usize
    }
}

#[derive(Clone, Debug)]
pub struct Binarized {
    pub schema: AtomSchema,
    pub matrix: BinaryAtomMatrix,
    pub warnings: Vec<String>,
}

/// Converts every covariate into binary atoms: one per category for
/// categorical columns, `bucket_count` quantile intervals for numerical
/// columns (fewer when quantile edges coincide).
pub fn binarize(
    dataset: &ObservationalDataset,
    bucket_count: usize,
) -> Result<Binarized, DatasetError> {
    if bucket_count < 2 {
        return Err(DatasetError::BucketCount(bucket_count));
    }
    let n = dataset.n();
    let mut atoms = Vec::new();
    let mut ranges = Vec::new();
    let mut codes: Vec<Vec<u32>> = Vec::new();
    let mut warnings = Vec::new();
    for (c, (spec, column)) in dataset.schema().iter().zip(dataset.columns()).enumerate() {
        let start = atoms.len();
        match column {
            Column::Categorical { levels, codes: col_codes } => {
                // only levels that actually occur get an atom
                let mut used = vec![false; levels.len()];
                for &k in col_codes {
                    used[k as usize] = true;
                }
                let mut remap = vec![u32::MAX; levels.len()];
                for (k, level) in levels.iter().enumerate().filter(|(k, _)| used[*k]) {
                    remap[k] = (atoms.len() - start) as u32;
                    atoms.push(Atom {
                        covariate: c,
                        covariate_name: spec.name.clone(),
                        predicate: AtomPredicate::Equals(level.clone()),
                    });
                }
                codes.push(col_codes.iter().map(|&k| remap[k as usize]).collect());
            }
            Column::Numerical(values) => {
                let edges = quantile_edges(values, bucket_count);
                let mut lo = f64::NEG_INFINITY;
                for &hi in edges.iter().chain(std::iter::once(&f64::INFINITY)) {
                    atoms.push(Atom {
                        covariate: c,
                        covariate_name: spec.name.clone(),
                        predicate: AtomPredicate::Interval { lo, hi },
                    });
                    lo = hi;
                }
                codes.push(
                    values
                        .iter()
                        .map(|&x| edges.partition_point(|&e| e < x) as u32)
                        .collect(),
                );
            }
        }
        if atoms.len() - start == 1 {
            warnings.push(format!(
                "covariate {:?} is constant and yields a single always-true atom",
                spec.name
            ));
        }
        ranges.push(start..atoms.len());
    }

    let mut columns = vec![UnitMask::empty(n); atoms.len()];
    for (c, range) in ranges.iter().enumerate() {
        for (i, &k) in codes[c].iter().enumerate() {
            columns[range.start + k as usize].insert(i);
        }
    }
    Ok(Binarized {
        schema: AtomSchema {
            atoms,
            covariate_names: dataset.schema().iter().map(|s| s.name.clone()).collect(),
            ranges,
        },
        matrix: BinaryAtomMatrix { n, columns, codes },
        warnings,
    })
}

/// Interior interval edges: the inverted-CDF sample quantiles at
/// `k / bucket_count`, deduplicated, excluding the maximum so that every
/// interval holds at least one observation.
pub(crate) fn quantile_edges(values: &[f64], bucket_count: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let max = sorted[m - 1];
    let mut edges: Vec<f64> = (1..bucket_count)
        .map(|k| {
            let rank = (k * m).div_ceil(bucket_count);
            sorted[rank.max(1) - 1]
        })
        .filter(|&e| e < max)
        .collect();
    edges.dedup();
    edges
}
