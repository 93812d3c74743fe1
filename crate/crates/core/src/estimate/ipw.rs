//! Inverse-probability-weighted subgroup consequents.
//!
//! Within the covered units, the effect is the normalized weighted mean of
//! treated outcomes minus that of control outcomes, with
//! `w = T / e + (1 - T) / (1 - e)`. Each arm's outcome variance is weighted
//! the same way around that arm's own weighted mean.

use serde::{Deserialize, Serialize};

use super::EstimateError;
use crate::mask::UnitMask;

/// Default minimum number of treated and of control units a subgroup must
/// contain for its effect to be identifiable.
pub const DEFAULT_MIN_GROUP: usize = 10;

/// IPW weight per unit.
pub fn ipw_weights(treated: &[bool], scores: &[f64]) -> Vec<f64> {
    treated
        .iter()
        .zip(scores)
        .map(|(&t, &e)| if t { 1.0 / e } else { 1.0 / (1.0 - e) })
        .collect()
}

/// Running weighted mean and variance (West's incremental update).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct WeightedMoments {
    pub count: usize,
    pub sum_w: f64,
    mean: f64,
    m2: f64,
}

impl WeightedMoments {
    pub fn push(&mut self, w: f64, y: f64) {
        self.count += 1;
        let sum_w = self.sum_w + w;
        let delta = y - self.mean;
        self.mean += delta * w / sum_w;
        self.m2 += w * delta * (y - self.mean);
        self.sum_w = sum_w;
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Weighted population variance; never negative.
    pub fn variance(&self) -> f64 {
        if self.sum_w > 0.0 {
            (self.m2 / self.sum_w).max(0.0)
        } else {
            0.0
        }
    }
}

/// Per-arm weighted moments over a set of units.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ArmMoments {
    pub control: WeightedMoments,
    pub treated: WeightedMoments,
}

impl ArmMoments {
    pub fn collect(
        units: impl IntoIterator<Item = usize>,
        treated: &[bool],
        outcome: &[f64],
        weights: &[f64],
    ) -> Self {
        let mut m = ArmMoments::default();
        for i in units {
            if treated[i] {
                m.treated.push(weights[i], outcome[i]);
            } else {
                m.control.push(weights[i], outcome[i]);
            }
        }
        m
    }

    pub fn check(&self, min_group: usize) -> Result<(), EstimateError> {
        let min = min_group.max(1);
        if self.treated.count < min || self.control.count < min {
            return Err(EstimateError::NotIdentifiable {
                n_treated: self.treated.count,
                n_control: self.control.count,
                min_group: min,
            });
        }
        Ok(())
    }

    pub fn tau(&self) -> f64 {
        self.treated.mean() - self.control.mean()
    }
}

/// Weighted effect over the covered units.
pub fn estimate_cate(
    covered: &UnitMask,
    treated: &[bool],
    outcome: &[f64],
    weights: &[f64],
    min_group: usize,
) -> Result<f64, EstimateError> {
    let m = ArmMoments::collect(covered.iter(), treated, outcome, weights);
    m.check(min_group)?;
    Ok(m.tau())
}

/// Weighted outcome variances `(control, treated)` over the covered units.
pub fn estimate_variances(
    covered: &UnitMask,
    treated: &[bool],
    outcome: &[f64],
    weights: &[f64],
    min_group: usize,
) -> Result<(f64, f64), EstimateError> {
    let m = ArmMoments::collect(covered.iter(), treated, outcome, weights);
    m.check(min_group)?;
    Ok((m.control.variance(), m.treated.variance()))
}

/// The consequent of a subgroup plus its coverage and length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubgroupMetrics {
    pub tau: f64,
    pub var0: f64,
    pub var1: f64,
    pub coverage: usize,
    pub coverage_pct: f64,
    pub length: usize,
    pub n_treated: usize,
    pub n_control: usize,
    /// Weighted control-arm outcome mean.
    pub mean0: f64,
    /// Weighted treated-arm outcome mean.
    pub mean1: f64,
}

impl SubgroupMetrics {
    pub fn from_moments(m: &ArmMoments, n_total: usize, length: usize) -> Self {
        let coverage = m.treated.count + m.control.count;
        Self {
            tau: m.tau(),
            var0: m.control.variance(),
            var1: m.treated.variance(),
            coverage,
            coverage_pct: 100.0 * coverage as f64 / n_total as f64,
            length,
            n_treated: m.treated.count,
            n_control: m.control.count,
            mean0: m.control.mean(),
            mean1: m.treated.mean(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all(n: usize) -> UnitMask {
        UnitMask::full(n)
    }

    #[test]
    fn uniform_scores_reduce_to_difference_of_means() {
        let treated = [true, true, false, false];
        let y = [3.0, 5.0, 1.0, 1.0];
        let w = ipw_weights(&treated, &[0.5; 4]);
        let tau = estimate_cate(&all(4), &treated, &y, &w, 2).unwrap();
        assert_eq!(tau, 3.0);
    }

    #[test]
    fn hand_weighted_effect() {
        // treated (e=.8, y=2), (e=.5, y=4); control (e=.5, y=1), (e=.2, y=3)
        let treated = [true, true, false, false];
        let scores = [0.8, 0.5, 0.5, 0.2];
        let y = [2.0, 4.0, 1.0, 3.0];
        let w = ipw_weights(&treated, &scores);
        assert_eq!(w, vec![1.25, 2.0, 2.0, 1.25]);
        let tau = estimate_cate(&all(4), &treated, &y, &w, 2).unwrap();
        // (1.25*2 + 2*4)/3.25 - (2*1 + 1.25*3)/3.25
        assert!((tau - (10.5 / 3.25 - 5.75 / 3.25)).abs() < 1e-12);
        assert!((tau - 1.461_538_461_5).abs() < 1e-6);
        let (var0, _) = estimate_variances(&all(4), &treated, &y, &w, 2).unwrap();
        let mean0: f64 = 5.75 / 3.25;
        let oracle0 = (2.0 * (1.0 - mean0).powi(2) + 1.25 * (3.0 - mean0).powi(2)) / 3.25;
        assert!((mean0 - 1.7692).abs() < 1e-4);
        assert!((var0 - oracle0).abs() < 1e-12);
        assert!((var0 - 0.9467).abs() < 1e-4);
    }

    #[test]
    fn missing_arm_is_not_identifiable() {
        let treated = [true, true, true];
        let w = [2.0; 3];
        assert!(matches!(
            estimate_cate(&all(3), &treated, &[1.0, 2.0, 3.0], &w, 1),
            Err(EstimateError::NotIdentifiable { n_control: 0, .. })
        ));
    }

    #[test]
    fn constant_group_has_zero_variance() {
        let treated = [true, true, false, false];
        let y = [4.0, 4.0, 1.0, 7.0];
        let w = ipw_weights(&treated, &[0.3, 0.6, 0.2, 0.9]);
        let (var0, var1) = estimate_variances(&all(4), &treated, &y, &w, 2).unwrap();
        assert_eq!(var1, 0.0);
        assert!(var0 > 0.0);
    }

    #[test]
    fn weights_bounded_by_clip() {
        let w = ipw_weights(&[true, false], &[0.01, 0.99]);
        assert!(w.iter().all(|&x| x <= 100.0 + 1e-9));
    }
}
