use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::{Column, CovariateKind, DatasetError, ObservationalDataset};

/// Label given to missing categorical values.
pub const MISSING_CATEGORY: &str = "missing";

const MISSING_TOKENS: &[&str] = &["", "NA", "N/A", "NaN", "nan", "null", "NULL", "?"];

fn is_missing(raw: &str) -> bool {
    MISSING_TOKENS.contains(&raw)
}

fn default_buckets() -> usize {
    4
}

/// How to read a CSV into an [`ObservationalDataset`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub treatment: String,
    /// Raw treatment value mapped to 1. Defaults to the lexicographically
    /// larger of the two observed values.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive_value: Option<String>,
    pub outcome: String,
    #[serde(default = "default_buckets")]
    pub buckets: usize,
    /// Per-column kind overrides; other columns are inferred.
    #[serde(default)]
    pub types: BTreeMap<String, CovariateKind>,
}

impl DatasetConfig {
    pub fn new(treatment: impl Into<String>, outcome: impl Into<String>) -> Self {
        Self {
            treatment: treatment.into(),
            positive_value: None,
            outcome: outcome.into(),
            buckets: default_buckets(),
            types: BTreeMap::new(),
        }
    }
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self::new("T", "Y")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreatmentMapping {
    pub positive: String,
    pub negative: String,
}

/// What ingestion did to the raw rows.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    /// Rows dropped for a missing treatment or outcome.
    pub dropped_rows: usize,
    /// Per-column count of imputed covariate values (missing category or
    /// median), only for columns with at least one.
    pub imputed: BTreeMap<String, usize>,
    pub treatment: TreatmentMapping,
}

/// Reads an RFC-4180 CSV with a header row.
pub fn ingest_csv<R: Read>(
    source: R,
    config: &DatasetConfig,
) -> Result<(ObservationalDataset, IngestReport), DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    {
        let mut seen = std::collections::HashSet::new();
        for h in &header {
            if !seen.insert(h.as_str()) {
                return Err(DatasetError::DuplicateColumn(h.clone()));
            }
        }
    }
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))
    };
    let t_idx = find(&config.treatment)?;
    let y_idx = find(&config.outcome)?;
    for name in config.types.keys() {
        if name != &config.treatment && name != &config.outcome {
            find(name)?;
        }
    }
    let cov_idx: Vec<usize> = (0..header.len())
        .filter(|&j| j != t_idx && j != y_idx)
        .collect();

    let mut ids = Vec::new();
    let mut raw_treatment = Vec::new();
    let mut outcome = Vec::new();
    let mut raw_cov: Vec<Vec<String>> = vec![Vec::new(); cov_idx.len()];
    let mut dropped = 0;
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let t = &record[t_idx];
        let y = &record[y_idx];
        if is_missing(t) || is_missing(y) {
            dropped += 1;
            continue;
        }
        let y: f64 = match y.parse::<f64>() {
            Ok(v) if v.is_finite() => v,
            _ => {
                return Err(DatasetError::NonNumericOutcome {
                    row,
                    value: y.to_string(),
                })
            }
        };
        ids.push(row as u64);
        raw_treatment.push(t.to_string());
        outcome.push(y);
        for (k, &j) in cov_idx.iter().enumerate() {
            raw_cov[k].push(record[j].to_string());
        }
    }
    if ids.is_empty() {
        return Err(DatasetError::NoRows);
    }

    let mut values: Vec<&str> = raw_treatment.iter().map(String::as_str).collect();
    values.sort_unstable();
    values.dedup();
    if values.len() != 2 {
        return Err(DatasetError::TreatmentValues {
            count: values.len(),
            values: values.iter().map(|s| s.to_string()).collect(),
        });
    }
    let positive = match &config.positive_value {
        Some(p) if values.contains(&p.as_str()) => p.clone(),
        Some(p) => return Err(DatasetError::UnknownPositiveValue(p.clone())),
        None => values[1].to_string(),
    };
    let negative = values
        .iter()
        .find(|v| **v != positive)
        .map(|s| s.to_string())
        .unwrap();
    let treated: Vec<bool> = raw_treatment.iter().map(|t| *t == positive).collect();

    let mut imputed = BTreeMap::new();
    let mut names = Vec::with_capacity(cov_idx.len());
    let mut columns = Vec::with_capacity(cov_idx.len());
    for (k, &j) in cov_idx.iter().enumerate() {
        let name = &header[j];
        let raw = &raw_cov[k];
        let kind = config
            .types
            .get(name)
            .copied()
            .unwrap_or_else(|| infer_kind(raw));
        let (column, n_imputed) = match kind {
            CovariateKind::Categorical => {
                let labels: Vec<&str> = raw
                    .iter()
                    .map(|v| if is_missing(v) { MISSING_CATEGORY } else { v })
                    .collect();
                let n_missing = raw.iter().filter(|v| is_missing(v)).count();
                (Column::categorical_from_labels(&labels), n_missing)
            }
            CovariateKind::Numerical => numeric_column(name, raw, &ids)?,
        };
        if n_imputed > 0 {
            imputed.insert(name.clone(), n_imputed);
        }
        names.push(name.clone());
        columns.push(column);
    }

    let dataset = ObservationalDataset::new(
        ids,
        names,
        columns,
        treated,
        outcome,
        config.treatment.clone(),
        config.outcome.clone(),
    )?;
    Ok((
        dataset,
        IngestReport {
            dropped_rows: dropped,
            imputed,
            treatment: TreatmentMapping { positive, negative },
        },
    ))
}

fn infer_kind(raw: &[String]) -> CovariateKind {
    let mut any = false;
    for v in raw.iter().filter(|v| !is_missing(v)) {
        any = true;
        match v.parse::<f64>() {
            Ok(x) if x.is_finite() => {}
            _ => return CovariateKind::Categorical,
        }
    }
    if any {
        CovariateKind::Numerical
    } else {
        CovariateKind::Categorical
    }
}

fn numeric_column(
    name: &str,
    raw: &[String],
    ids: &[u64],
) -> Result<(Column, usize), DatasetError> {
    let mut parsed = Vec::with_capacity(raw.len());
    for (v, &id) in raw.iter().zip(ids) {
        if is_missing(v) {
            parsed.push(None);
            continue;
        }
        match v.parse::<f64>() {
            Ok(x) if x.is_finite() => parsed.push(Some(x)),
            _ => {
                return Err(DatasetError::NonNumericCovariate {
                    column: name.to_string(),
                    row: id as usize,
                    value: v.clone(),
                })
            }
        }
    }
    let mut present: Vec<f64> = parsed.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(DatasetError::EmptyNumericColumn(name.to_string()));
    }
    present.sort_by(f64::total_cmp);
    let m = present.len();
    let median = if m % 2 == 1 {
        present[m / 2]
    } else {
        0.5 * (present[m / 2 - 1] + present[m / 2])
    };
    let n_missing = parsed.iter().filter(|v| v.is_none()).count();
    let values = parsed.into_iter().map(|v| v.unwrap_or(median)).collect();
    Ok((Column::Numerical(values), n_missing))
}
