//! Synthetic observational data with a planted high-effect subgroup, plus
//! the exhaustive front oracle and benchmark metrics.
//!
//! Generation, per unit:
//!
//! * categorical covariates `c0, c1, ...` uniform over the first
//!   `categorical_levels` letters; in linear predictors a level with code
//!   `k` of `K` contributes `2k/(K-1) - 1`, so `a` is -1 and the last level
//!   is +1;
//! * numerical covariates `x0, x1, ...` standard normal;
//! * `T ~ Bernoulli(logistic(treatment_intercept + treatment_coeffs . X))`;
//! * `Y = baseline_coeffs . X + TE(X) T + N(0, noise_sd^2)` where `TE` is
//!   `planted_effect` inside the planted rule and `background_effect`
//!   outside.

mod bench;

pub use bench::{
    bench_csv, bench_markdown, bench_metrics, enumerate_candidates, exhaustive_front, run_bench,
    BenchMetrics, BenchRow, MAX_ORACLE_ATOMS, MAX_ORACLE_D,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{AtomJson, Column, DatasetError, ObservationalDataset};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("planted rule covers {pct:.2}% of units; it must cover between 1% and 99%")]
    PlantedCoverage { pct: f64 },
    #[error("exhaustive enumeration supports at most {max} atoms, the data has {d}")]
    TooManyAtoms { d: usize, max: usize },
    #[error("max_atoms must lie in 1..={max}, got {got}")]
    MaxAtoms { got: usize, max: usize },
    #[error("method front is empty")]
    EmptyFront,
    #[error("unknown preset {0:?}; expected syn-1 .. syn-6")]
    UnknownPreset(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n: usize,
    pub n_categorical: usize,
    pub n_numerical: usize,
    pub categorical_levels: usize,
    /// Same atom format as subgroup JSON; OR within a covariate, AND
    /// across covariates. Ranges are `(lo, hi]`.
    pub planted_rule: Vec<AtomJson>,
    pub planted_effect: f64,
    pub background_effect: f64,
    pub noise_sd: f64,
    pub treatment_intercept: f64,
    /// One per covariate, categoricals first; empty means 0.4 each.
    pub treatment_coeffs: Vec<f64>,
    /// One per covariate, categoricals first; empty means 0.5 each.
    pub baseline_coeffs: Vec<f64>,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n: 3000,
            n_categorical: 5,
            n_numerical: 5,
            categorical_levels: 3,
            planted_rule: vec![
                AtomJson::Eq {
                    covariate: "c0".into(),
                    value: "a".into(),
                },
                AtomJson::InRange {
                    covariate: "x0".into(),
                    value: [Some(0.0), None],
                },
            ],
            planted_effect: 5.0,
            background_effect: 0.0,
            noise_sd: 1.0,
            treatment_intercept: 0.0,
            treatment_coeffs: Vec::new(),
            baseline_coeffs: Vec::new(),
            seed: 42,
        }
    }
}

const PRESETS: [(usize, usize, usize); 6] = [
    (3000, 5, 5),
    (3000, 5, 15),
    (4000, 5, 25),
    (4000, 5, 45),
    (4000, 5, 75),
    (4000, 5, 95),
];

impl SynthSpec {
    /// Shapes `syn-1` .. `syn-6`: unit count, categorical and numerical
    /// covariate counts, with default generation settings.
    pub fn preset(name: &str) -> Result<Self, SynthError> {
        let k = name
            .to_ascii_lowercase()
            .strip_prefix("syn-")
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|k| (1..=PRESETS.len()).contains(k))
            .ok_or_else(|| SynthError::UnknownPreset(name.to_string()))?;
        let (n, n_categorical, n_numerical) = PRESETS[k - 1];
        Ok(Self {
            n,
            n_categorical,
            n_numerical,
            ..Self::default()
        })
    }

    pub fn n_covariates(&self) -> usize {
        self.n_categorical + self.n_numerical
    }

    fn coeffs(&self, given: &[f64], default: f64, what: &str) -> Result<Vec<f64>, SynthError> {
        if given.is_empty() {
            Ok(vec![default; self.n_covariates()])
        } else if given.len() == self.n_covariates() {
            Ok(given.to_vec())
        } else {
            Err(SynthError::InvalidSpec(format!(
                "{what} has {} entries for {} covariates",
                given.len(),
                self.n_covariates()
            )))
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.n < 100 {
            return bad(format!("n must be >= 100, got {}", self.n));
        }
        if self.n_covariates() == 0 {
            return bad("at least one covariate is required".into());
        }
        if !(2..=26).contains(&self.categorical_levels) {
            return bad(format!("categorical_levels must lie in 2..=26, got {}", self.categorical_levels));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad(format!("noise_sd must be finite and >= 0, got {}", self.noise_sd));
        }
        if self.planted_rule.is_empty() {
            return bad("planted_rule must not be empty".into());
        }
        let all = [
            self.planted_effect,
            self.background_effect,
            self.treatment_intercept,
        ];
        if all
            .iter()
            .chain(&self.treatment_coeffs)
            .chain(&self.baseline_coeffs)
            .any(|v| !v.is_finite())
        {
            return bad("effects and coefficients must be finite".into());
        }
        self.coeffs(&self.treatment_coeffs, 0.0, "treatment_coeffs")?;
        self.coeffs(&self.baseline_coeffs, 0.0, "baseline_coeffs")?;
        for atom in &self.planted_rule {
            match atom {
                AtomJson::Eq { covariate, value } => {
                    if parse_index(covariate, 'c').filter(|&c| c < self.n_categorical).is_none() {
                        return bad(format!("planted rule: no categorical covariate {covariate:?}"));
                    }
                    let ok = value.len() == 1
                        && level_code(value).is_some_and(|k| k < self.categorical_levels);
                    if !ok {
                        return bad(format!("planted rule: {covariate} has no level {value:?}"));
                    }
                }
                AtomJson::InRange { covariate, value: [lo, hi] } => {
                    if parse_index(covariate, 'x').filter(|&x| x < self.n_numerical).is_none() {
                        return bad(format!("planted rule: no numerical covariate {covariate:?}"));
                    }
                    let (lo, hi) = (lo.unwrap_or(f64::NEG_INFINITY), hi.unwrap_or(f64::INFINITY));
                    if lo.is_nan() || hi.is_nan() || lo >= hi {
                        return bad(format!("planted rule: empty range for {covariate}"));
                    }
                }
            }
        }
        Ok(())
    }
}

fn parse_index(name: &str, prefix: char) -> Option<usize> {
    name.strip_prefix(prefix)?.parse().ok()
}

fn level_code(label: &str) -> Option<usize> {
    let c = label.chars().next()?;
    c.is_ascii_lowercase().then(|| (c as u8 - b'a') as usize)
}

fn level_label(code: usize) -> String {
    ((b'a' + code as u8) as char).to_string()
}

/// Per-unit quantities known only to the generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub true_e: Vec<f64>,
    pub te: Vec<f64>,
    pub planted: Vec<bool>,
    /// `baseline_coeffs . X`, the expected untreated outcome.
    pub baseline: Vec<f64>,
}

impl GroundTruth {
    pub fn planted_count(&self) -> usize {
        self.planted.iter().filter(|&&p| p).count()
    }
}

/// Evaluates the planted rule on raw covariate values.
fn planted_membership(
    rule: &[AtomJson],
    cat_codes: &[Vec<usize>],
    nums: &[Vec<f64>],
    n: usize,
) -> Vec<bool> {
    use std::collections::BTreeMap;
    let mut by_cov: BTreeMap<&str, Vec<&AtomJson>> = BTreeMap::new();
    for a in rule {
        by_cov.entry(a.covariate()).or_default().push(a);
    }
    (0..n)
        .map(|i| {
            by_cov.iter().all(|(_, atoms)| {
                atoms.iter().any(|a| match a {
                    AtomJson::Eq { covariate, value } => {
                        let c = parse_index(covariate, 'c').expect("validated");
                        Some(cat_codes[c][i]) == level_code(value)
                    }
                    AtomJson::InRange { covariate, value: [lo, hi] } => {
                        let x = nums[parse_index(covariate, 'x').expect("validated")][i];
                        x > lo.unwrap_or(f64::NEG_INFINITY) && x <= hi.unwrap_or(f64::INFINITY)
                    }
                })
            })
        })
        .collect()
}

/// Draws a dataset and its ground truth. Deterministic in `spec.seed`.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<(ObservationalDataset, GroundTruth), SynthError> {
    spec.validate()?;
    let n = spec.n;
    let k = spec.categorical_levels;
    let beta_t = spec.coeffs(&spec.treatment_coeffs, 0.4, "treatment_coeffs")?;
    let beta_y = spec.coeffs(&spec.baseline_coeffs, 0.5, "baseline_coeffs")?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let cat_codes: Vec<Vec<usize>> = (0..spec.n_categorical)
        .map(|_| (0..n).map(|_| rng.random_range(0..k)).collect())
        .collect();
    let nums: Vec<Vec<f64>> = (0..spec.n_numerical)
        .map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();

    let planted = planted_membership(&spec.planted_rule, &cat_codes, &nums, n);
    let pct = 100.0 * planted.iter().filter(|&&p| p).count() as f64 / n as f64;
    if !(1.0..=99.0).contains(&pct) {
        return Err(SynthError::PlantedCoverage { pct });
    }

    let features = |i: usize| {
        cat_codes
            .iter()
            .map(move |c| 2.0 * c[i] as f64 / (k - 1) as f64 - 1.0)
            .chain(nums.iter().map(move |x| x[i]))
    };
    let noise = Normal::new(0.0, spec.noise_sd).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    let mut true_e = Vec::with_capacity(n);
    let mut te = Vec::with_capacity(n);
    let mut baseline = Vec::with_capacity(n);
    let mut treated = Vec::with_capacity(n);
    let mut outcome = Vec::with_capacity(n);
    for i in 0..n {
        let eta = spec.treatment_intercept + features(i).zip(&beta_t).map(|(z, b)| z * b).sum::<f64>();
        let e = 1.0 / (1.0 + (-eta).exp());
        let t = rng.random_bool(e.clamp(0.0, 1.0));
        let base: f64 = features(i).zip(&beta_y).map(|(z, b)| z * b).sum();
        let effect = if planted[i] {
            spec.planted_effect
        } else {
            spec.background_effect
        };
        let y = base + if t { effect } else { 0.0 } + noise.sample(&mut rng);
        true_e.push(e);
        te.push(effect);
        baseline.push(base);
        treated.push(t);
        outcome.push(y);
    }

    let mut names = Vec::with_capacity(spec.n_covariates());
    let mut columns = Vec::with_capacity(spec.n_covariates());
    for (c, codes) in cat_codes.iter().enumerate() {
        names.push(format!("c{c}"));
        let labels: Vec<String> = codes.iter().map(|&k| level_label(k)).collect();
        columns.push(Column::categorical_from_labels(&labels));
    }
    for (x, values) in nums.into_iter().enumerate() {
        names.push(format!("x{x}"));
        columns.push(Column::Numerical(values));
    }
    let dataset = ObservationalDataset::new(
        (0..n as u64).collect(),
        names,
        columns,
        treated,
        outcome,
        "T",
        "Y",
    )?;
    Ok((
        dataset,
        GroundTruth {
            true_e,
            te,
            planted,
            baseline,
        },
    ))
}
