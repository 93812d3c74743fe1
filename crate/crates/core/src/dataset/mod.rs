//! Observational data: units with covariates, a binary treatment and a
//! numeric outcome.
//!
//! Data is stored column-wise. Row `i` is the `i`-th retained unit; its
//! stable identifier is `ids()[i]`, the zero-based data-row index in the
//! source file.

mod binarize;
mod ingest;
mod subgroup;

pub use binarize::{binarize, Atom, AtomPredicate, AtomSchema, Binarized, BinaryAtomMatrix};
pub use ingest::{ingest_csv, DatasetConfig, IngestReport, TreatmentMapping};
pub use subgroup::{
    antecedent_length, cover, merge_subgroups, split_subgroup, AtomJson, Genome, Origin,
    Subgroup, SubgroupJson,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("duplicate column name {0:?}")]
    DuplicateColumn(String),
    #[error("treatment column must hold exactly two distinct values, found {count}: {values:?}")]
    TreatmentValues { count: usize, values: Vec<String> },
    #[error("positive treatment value {0:?} does not occur in the treatment column")]
    UnknownPositiveValue(String),
    #[error("non-numeric outcome {value:?} on data row {row}")]
    NonNumericOutcome { row: usize, value: String },
    #[error("column {column:?} declared numerical holds non-numeric value {value:?} on data row {row}")]
    NonNumericCovariate {
        column: String,
        row: usize,
        value: String,
    },
    #[error("numerical column {0:?} has no observed values")]
    EmptyNumericColumn(String),
    #[error("no usable rows")]
    NoRows,
    #[error("data must contain both treated and control units ({treated} treated, {control} control)")]
    SingleArm { treated: usize, control: usize },
    #[error("column {column:?} has {got} values, expected {expected}")]
    LengthMismatch {
        column: String,
        got: usize,
        expected: usize,
    },
    #[error("unit ids must be unique")]
    DuplicateIds,
    #[error("outcome must be finite on every unit")]
    NonFiniteOutcome,
    #[error("bucket count must be at least 2, got {0}")]
    BucketCount(usize),
    #[error("genome has {got} bits but the atom schema has {expected} atoms")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("unknown covariate {0:?}")]
    UnknownCovariate(String),
    #[error("covariate {covariate:?} has no atom for value {value:?}")]
    UnknownValue { covariate: String, value: String },
    #[error("invalid atom for covariate {covariate:?}: {reason}")]
    InvalidAtom { covariate: String, reason: String },
    #[error("merge requires at least one covariate shared by both antecedents")]
    NothingToMerge,
    #[error("covariate {0:?} needs at least two selected atoms to split")]
    CannotSplit(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovariateKind {
    Categorical,
    Numerical,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    pub kind: CovariateKind,
}

/// Column storage for one covariate.
#[derive(Clone, Debug, PartialEq)]
pub enum Column {
    /// `levels` are sorted; `codes[i]` indexes into them.
    Categorical { levels: Vec<String>, codes: Vec<u32> },
    Numerical(Vec<f64>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Categorical { codes, .. } => codes.len(),
            Column::Numerical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> CovariateKind {
        match self {
            Column::Categorical { .. } => CovariateKind::Categorical,
            Column::Numerical(_) => CovariateKind::Numerical,
        }
    }

    /// Builds a categorical column from raw labels, sorting the level set.
    pub fn categorical_from_labels<S: AsRef<str>>(labels: &[S]) -> Column {
        let mut levels: Vec<String> = labels.iter().map(|s| s.as_ref().to_string()).collect();
        levels.sort();
        levels.dedup();
        let codes = labels
            .iter()
            .map(|s| levels.binary_search_by(|l| l.as_str().cmp(s.as_ref())).unwrap() as u32)
            .collect();
        Column::Categorical { levels, codes }
    }
}

/// A single covariate value of one unit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CovariateValue<'a> {
    Category(&'a str),
    Number(f64),
}

impl std::fmt::Display for CovariateValue<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CovariateValue::Category(s) => f.write_str(s),
            CovariateValue::Number(x) => write!(f, "{x}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ObservationalDataset {
    ids: Vec<u64>,
    schema: Vec<CovariateSpec>,
    columns: Vec<Column>,
    treated: Vec<bool>,
    outcome: Vec<f64>,
    treatment_name: String,
    outcome_name: String,
}

impl ObservationalDataset {
    /// Assembles a dataset and checks its invariants. The schema kinds are
    /// taken from the columns.
    pub fn new(
        ids: Vec<u64>,
        names: Vec<String>,
        columns: Vec<Column>,
        treated: Vec<bool>,
        outcome: Vec<f64>,
        treatment_name: impl Into<String>,
        outcome_name: impl Into<String>,
    ) -> Result<Self, DatasetError> {
        let n = treated.len();
        if n == 0 {
            return Err(DatasetError::NoRows);
        }
        let check = |column: &str, got: usize| {
            if got != n {
                Err(DatasetError::LengthMismatch {
                    column: column.to_string(),
                    got,
                    expected: n,
                })
            } else {
                Ok(())
            }
        };
        check("<ids>", ids.len())?;
        check("<outcome>", outcome.len())?;
        if names.len() != columns.len() {
            return Err(DatasetError::LengthMismatch {
                column: "<schema>".into(),
                got: names.len(),
                expected: columns.len(),
            });
        }
        for (name, col) in names.iter().zip(&columns) {
            check(name, col.len())?;
        }
        let mut seen = std::collections::HashSet::new();
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(DatasetError::DuplicateColumn(name.clone()));
            }
        }
        let mut sorted_ids = ids.clone();
        sorted_ids.sort_unstable();
        if sorted_ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(DatasetError::DuplicateIds);
        }
        if outcome.iter().any(|y| !y.is_finite()) {
            return Err(DatasetError::NonFiniteOutcome);
        }
        let n_treated = treated.iter().filter(|&&t| t).count();
        if n_treated == 0 || n_treated == n {
            return Err(DatasetError::SingleArm {
                treated: n_treated,
                control: n - n_treated,
            });
        }
        let schema = names
            .into_iter()
            .zip(&columns)
            .map(|(name, col)| CovariateSpec {
                name,
                kind: col.kind(),
            })
            .collect();
        Ok(Self {
            ids,
            schema,
            columns,
            treated,
            outcome,
            treatment_name: treatment_name.into(),
            outcome_name: outcome_name.into(),
        })
    }

    pub fn n(&self) -> usize {
        self.treated.len()
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn schema(&self) -> &[CovariateSpec] {
        &self.schema
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&Column> {
        self.covariate_index(name).map(|j| &self.columns[j])
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|c| c.name == name)
    }

    pub fn treated(&self) -> &[bool] {
        &self.treated
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn treatment_name(&self) -> &str {
        &self.treatment_name
    }

    pub fn outcome_name(&self) -> &str {
        &self.outcome_name
    }

    pub fn n_treated(&self) -> usize {
        self.treated.iter().filter(|&&t| t).count()
    }

    pub fn value(&self, row: usize, covariate: usize) -> CovariateValue<'_> {
        match &self.columns[covariate] {
            Column::Categorical { levels, codes } => {
                CovariateValue::Category(&levels[codes[row] as usize])
            }
            Column::Numerical(v) => CovariateValue::Number(v[row]),
        }
    }

    /// Row index of a unit id.
    pub fn row_of(&self, id: u64) -> Option<usize> {
        // ids are ascending for ingested and generated data
        match self.ids.binary_search(&id) {
            Ok(i) => Some(i),
            Err(_) => self.ids.iter().position(|&x| x == id),
        }
    }

    /// A copy of the dataset with rows reordered by `order` (a permutation
    /// of `0..n`).
    pub fn permuted(&self, order: &[usize]) -> Self {
        assert_eq!(order.len(), self.n());
        let columns = self
            .columns
            .iter()
            .map(|col| match col {
                Column::Categorical { levels, codes } => Column::Categorical {
                    levels: levels.clone(),
                    codes: order.iter().map(|&i| codes[i]).collect(),
                },
                Column::Numerical(v) => Column::Numerical(order.iter().map(|&i| v[i]).collect()),
            })
            .collect();
        Self {
            ids: order.iter().map(|&i| self.ids[i]).collect(),
            schema: self.schema.clone(),
            columns,
            treated: order.iter().map(|&i| self.treated[i]).collect(),
            outcome: order.iter().map(|&i| self.outcome[i]).collect(),
            treatment_name: self.treatment_name.clone(),
            outcome_name: self.outcome_name.clone(),
        }
    }

    /// A copy with every outcome replaced by `f(outcome)`.
    pub fn map_outcome(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut out = self.clone();
        for y in &mut out.outcome {
            *y = f(*y);
        }
        out
    }

    /// Writes the dataset back out as CSV: covariates in schema order, then
    /// treatment (as 0/1) and outcome.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<(), DatasetError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.schema.iter().map(|c| c.name.as_str()).collect();
        header.push(&self.treatment_name);
        header.push(&self.outcome_name);
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for row in 0..self.n() {
            record.clear();
            for j in 0..self.columns.len() {
                record.push(self.value(row, j).to_string());
            }
            record.push(if self.treated[row] { "1" } else { "0" }.to_string());
            record.push(self.outcome[row].to_string());
            w.write_record(&record)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}
