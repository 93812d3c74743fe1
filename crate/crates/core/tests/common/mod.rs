#![allow(dead_code)]

use cprism_core::dataset::{AtomJson, Column, ObservationalDataset};
use cprism_core::mask::UnitMask;
use cprism_core::synth::SynthSpec;

pub fn dataset(cats: &[(&str, Vec<&str>)], nums: &[(&str, Vec<f64>)], treated: Vec<bool>, y: Vec<f64>) -> ObservationalDataset {
    let n = treated.len();
    let mut names = Vec::new();
    let mut cols = Vec::new();
    for (name, labels) in cats {
        names.push(name.to_string());
        cols.push(Column::categorical_from_labels(labels));
    }
    for (name, values) in nums {
        names.push(name.to_string());
        cols.push(Column::Numerical(values.clone()));
    }
    ObservationalDataset::new((0..n as u64).collect(), names, cols, treated, y, "T", "Y").unwrap()
}

/// Unit-membership F1 of a cover against a truth vector.
pub fn f1(mask: &UnitMask, truth: &[bool]) -> f64 {
    let tp = mask.iter().filter(|&i| truth[i]).count() as f64;
    let positives = truth.iter().filter(|&&b| b).count() as f64;
    if tp == 0.0 {
        0.0
    } else {
        2.0 * tp / (mask.count() as f64 + positives)
    }
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Brute-force dominance for minimization.
pub fn naive_dominates(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x <= y) && a.iter().zip(b).any(|(x, y)| x < y)
}

/// Fronts by repeated peeling of the non-dominated remainder.
pub fn naive_fronts(points: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let mut left: Vec<usize> = (0..points.len()).collect();
    let mut fronts = Vec::new();
    while !left.is_empty() {
        let front: Vec<usize> = left
            .iter()
            .copied()
            .filter(|&i| !left.iter().any(|&j| naive_dominates(&points[j], &points[i])))
            .collect();
        left.retain(|i| !front.contains(i));
        fronts.push(front);
    }
    fronts
}

/// Two-atom planted rule `c0 = a AND x0 > 0` over the default generator.
pub fn planted_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        seed,
        ..SynthSpec::default()
    }
}

/// Twelve atoms at three buckets: three 3-level categoricals and one
/// numerical covariate.
pub fn oracle_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        n: 2000,
        n_categorical: 3,
        n_numerical: 1,
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
        seed,
        ..SynthSpec::default()
    }
}

/// Constant effect, treatment independent of covariates.
pub fn rct_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        planted_effect: 2.0,
        background_effect: 2.0,
        treatment_coeffs: vec![0.0; 10],
        seed,
        ..SynthSpec::default()
    }
}

pub fn fit(spec: &SynthSpec, buckets: usize) -> (cprism_core::Study, cprism_core::synth::GroundTruth) {
    let (ds, truth) = cprism_core::synth::generate_synthetic(spec).unwrap();
    let study = cprism_core::Study::fit(ds, buckets, &cprism_core::estimate::PropensityParams::default()).unwrap();
    (study, truth)
}

/// Largest unit-membership F1 of any front-1 subgroup.
pub fn best_f1(study: &cprism_core::Study, front: &[cprism_core::discovery::RankedSubgroup], truth: &[bool]) -> f64 {
    front
        .iter()
        .map(|r| f1(&study.cover(&r.genome).unwrap(), truth))
        .fold(0.0, f64::max)
}
