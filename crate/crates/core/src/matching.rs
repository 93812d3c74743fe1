//! Caliper matching on propensity scores, pair-level treatment effects and
//! the score histogram behind the validation view.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::ObservationalDataset;
use crate::mask::UnitMask;

pub const DEFAULT_EPSILON: f64 = 0.1;
pub const DEFAULT_BIN_WIDTH: f64 = 0.05;
pub const DEFAULT_DISPLAY_CAP: usize = 500;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchingError {
    #[error("matching needs treated and control units in the subgroup (treated {treated}, control {control})")]
    EmptyArm { treated: usize, control: usize },
    #[error("no matched pairs")]
    NoPairs,
    #[error("caliper must be a non-negative finite number, got {0}")]
    InvalidEpsilon(f64),
    #[error("bin width must lie in (0, 1], got {0}")]
    InvalidBinWidth(f64),
    #[error("mask covers {mask} units but the dataset has {n}")]
    LengthMismatch { mask: usize, n: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    #[serde(rename = "t")]
    pub treated_id: u64,
    #[serde(rename = "c")]
    pub control_id: u64,
    /// Treated outcome minus control outcome.
    pub ite: f64,
    #[serde(rename = "gap")]
    pub score_gap: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct ScoreKey {
    score: OrderedFloat<f64>,
    id: u64,
}

/// Greedy one-to-one matching inside `covered`. Treated units go in
/// ascending id order; each takes the closest unmatched control by score,
/// preferring the smaller control id on ties, when the gap is within
/// `epsilon`.
pub fn match_units(
    covered: &UnitMask,
    dataset: &ObservationalDataset,
    scores: &[f64],
    epsilon: f64,
) -> Result<Vec<MatchedPair>, MatchingError> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(MatchingError::InvalidEpsilon(epsilon));
    }
    if covered.len() != dataset.n() || scores.len() != dataset.n() {
        return Err(MatchingError::LengthMismatch {
            mask: covered.len(),
            n: dataset.n(),
        });
    }
    let ids = dataset.ids();
    let treated_flags = dataset.treated();
    let y = dataset.outcome();

    let mut treated: Vec<usize> = Vec::new();
    let mut controls = BTreeSet::new();
    let mut row_of_control = std::collections::HashMap::new();
    for i in covered.iter() {
        if treated_flags[i] {
            treated.push(i);
        } else {
            controls.insert(ScoreKey {
                score: OrderedFloat(scores[i]),
                id: ids[i],
            });
            row_of_control.insert(ids[i], i);
        }
    }
    if treated.is_empty() || controls.is_empty() {
        return Err(MatchingError::EmptyArm {
            treated: treated.len(),
            control: controls.len(),
        });
    }
    treated.sort_by_key(|&i| ids[i]);

    let mut pairs = Vec::new();
    for t in treated {
        let s = scores[t];
        let probe = ScoreKey {
            score: OrderedFloat(s),
            id: 0,
        };
        let above = controls.range(probe..).next().copied();
        let below = controls.range(..probe).next_back().map(|k| {
            // smallest id among controls sharing that score
            *controls
                .range(ScoreKey { score: k.score, id: 0 }..)
                .next()
                .expect("key exists")
        });
        let best = match (below, above) {
            (None, None) => None,
            (Some(b), None) => Some(b),
            (None, Some(a)) => Some(a),
            (Some(b), Some(a)) => {
                let (gb, ga) = ((s - b.score.0).abs(), (a.score.0 - s).abs());
                match gb.total_cmp(&ga) {
                    std::cmp::Ordering::Less => Some(b),
                    std::cmp::Ordering::Greater => Some(a),
                    std::cmp::Ordering::Equal => Some(if b.id < a.id { b } else { a }),
                }
            }
        };
        if let Some(c) = best {
            let gap = (s - c.score.0).abs();
            if gap <= epsilon {
                controls.remove(&c);
                let crow = row_of_control[&c.id];
                pairs.push(MatchedPair {
                    treated_id: ids[t],
                    control_id: c.id,
                    ite: y[t] - y[crow],
                    score_gap: gap,
                });
            }
        }
    }
    Ok(pairs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IteSummary {
    pub mean_ite: f64,
    pub ci95: [f64; 2],
    pub ites: Vec<f64>,
}

/// Mean pair effect with a normal-approximation 95% interval
/// (mean ± 1.96 · sd / √n, sample sd).
pub fn ite_distribution(pairs: &[MatchedPair]) -> Result<IteSummary, MatchingError> {
    if pairs.is_empty() {
        return Err(MatchingError::NoPairs);
    }
    let ites: Vec<f64> = pairs.iter().map(|p| p.ite).collect();
    let n = ites.len() as f64;
    let mean = ites.iter().sum::<f64>() / n;
    let half = if ites.len() < 2 {
        0.0
    } else {
        let ss: f64 = ites.iter().map(|v| (v - mean).powi(2)).sum();
        1.96 * (ss / (n - 1.0)).sqrt() / n.sqrt()
    };
    Ok(IteSummary {
        mean_ite: mean,
        ci95: [mean - half, mean + half],
        ites,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub t_count: usize,
    pub c_count: usize,
}

fn tidy(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

/// Treated and control counts of covered units' scores in fixed-width bins
/// over [0, 1]; a score on a bin edge goes to the upper bin.
pub fn propensity_histogram(
    covered: &UnitMask,
    treated: &[bool],
    scores: &[f64],
    bin_width: f64,
) -> Result<Vec<HistogramBin>, MatchingError> {
    if !(bin_width > 0.0 && bin_width <= 1.0) {
        return Err(MatchingError::InvalidBinWidth(bin_width));
    }
    let nbins = ((1.0 / bin_width) - 1e-9).ceil().max(1.0) as usize;
    let mut bins: Vec<HistogramBin> = (0..nbins)
        .map(|k| HistogramBin {
            lo: tidy(k as f64 * bin_width),
            hi: tidy(((k + 1) as f64 * bin_width).min(1.0)),
            t_count: 0,
            c_count: 0,
        })
        .collect();
    for i in covered.iter() {
        let k = ((scores[i] / bin_width + 1e-9).floor().max(0.0) as usize).min(nbins - 1);
        if treated[i] {
            bins[k].t_count += 1;
        } else {
            bins[k].c_count += 1;
        }
    }
    Ok(bins)
}

/// At most `cap` pairs, stratified over ITE deciles so that each decile
/// keeps its share (largest-remainder rounding). Returned in input order.
pub fn sample_pairs_for_display(pairs: &[MatchedPair], cap: usize, seed: u64) -> Vec<MatchedPair> {
    let n = pairs.len();
    if n <= cap {
        return pairs.to_vec();
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| pairs[a].ite.total_cmp(&pairs[b].ite).then(a.cmp(&b)));
    let mut strata: Vec<Vec<usize>> = vec![Vec::new(); 10];
    for (rank, &i) in order.iter().enumerate() {
        strata[rank * 10 / n].push(i);
    }
    let quotas: Vec<f64> = strata
        .iter()
        .map(|s| cap as f64 * s.len() as f64 / n as f64)
        .collect();
    let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut left = cap - alloc.iter().sum::<usize>();
    let mut by_remainder: Vec<usize> = (0..10).collect();
    by_remainder.sort_by(|&a, &b| {
        let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for k in by_remainder {
        if left == 0 {
            break;
        }
        if alloc[k] < strata[k].len() {
            alloc[k] += 1;
            left -= 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = Vec::with_capacity(cap);
    for (stratum, &k) in strata.iter().zip(&alloc) {
        chosen.extend(sample(&mut rng, stratum.len(), k).into_iter().map(|j| stratum[j]));
    }
    chosen.sort_unstable();
    chosen.into_iter().map(|i| pairs[i].clone()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub pairs: Vec<MatchedPair>,
    /// `None` when nothing matched.
    pub mean_ite: Option<f64>,
    pub ci95: Option<[f64; 2]>,
    pub hist: Vec<HistogramBin>,
    pub n_treated: usize,
    pub n_control: usize,
    pub n_pairs: usize,
    pub sampled_pairs: Vec<MatchedPair>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchParams {
    pub epsilon: f64,
    pub bin_width: f64,
    pub display_cap: usize,
    pub seed: u64,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            bin_width: DEFAULT_BIN_WIDTH,
            display_cap: DEFAULT_DISPLAY_CAP,
            seed: 42,
        }
    }
}

/// Matching, effect summary, histogram and display sample for one subgroup.
pub fn match_report(
    covered: &UnitMask,
    dataset: &ObservationalDataset,
    scores: &[f64],
    params: &MatchParams,
) -> Result<MatchReport, MatchingError> {
    let pairs = match_units(covered, dataset, scores, params.epsilon)?;
    let hist = propensity_histogram(covered, dataset.treated(), scores, params.bin_width)?;
    let n_treated = covered.iter().filter(|&i| dataset.treated()[i]).count();
    let n_control = covered.count() - n_treated;
    let (mean_ite, ci95) = match ite_distribution(&pairs) {
        Ok(s) => (Some(s.mean_ite), Some(s.ci95)),
        Err(_) => (None, None),
    };
    let sampled_pairs = sample_pairs_for_display(&pairs, params.display_cap, params.seed);
    Ok(MatchReport {
        n_pairs: pairs.len(),
        pairs,
        mean_ite,
        ci95,
        hist,
        n_treated,
        n_control,
        sampled_pairs,
    })
}
