//! A fitted analysis context: dataset, atoms, and a propensity model fit
//! once on the full data and shared by every subgroup evaluation.

use crate::dataset::{antecedent_length, binarize, cover, Binarized, Genome, ObservationalDataset};
use crate::estimate::{
    fit_propensity, ipw_weights, ArmMoments, PropensityModel, PropensityParams, SubgroupMetrics,
    DEFAULT_MIN_GROUP,
};
use crate::mask::UnitMask;
use crate::Error;

#[derive(Clone, Debug)]
pub struct Study {
    pub dataset: ObservationalDataset,
    pub binarized: Binarized,
    pub propensity: PropensityModel,
    pub weights: Vec<f64>,
    /// Minimum treated and control units inside a subgroup.
    pub min_group: usize,
}

impl Study {
    /// Binarizes the dataset and fits the propensity model.
    pub fn fit(
        dataset: ObservationalDataset,
        bucket_count: usize,
        params: &PropensityParams,
    ) -> Result<Self, Error> {
        let binarized = binarize(&dataset, bucket_count)?;
        let propensity = fit_propensity(&dataset, &binarized, params)?;
        Ok(Self::from_parts(dataset, binarized, propensity))
    }

    pub fn from_parts(
        dataset: ObservationalDataset,
        binarized: Binarized,
        propensity: PropensityModel,
    ) -> Self {
        let weights = ipw_weights(dataset.treated(), &propensity.scores);
        Self {
            dataset,
            binarized,
            propensity,
            weights,
            min_group: DEFAULT_MIN_GROUP,
        }
    }

    pub fn with_min_group(mut self, min_group: usize) -> Self {
        self.min_group = min_group;
        self
    }

    pub fn n(&self) -> usize {
        self.dataset.n()
    }

    pub fn d(&self) -> usize {
        self.binarized.schema.d()
    }

    pub fn scores(&self) -> &[f64] {
        &self.propensity.scores
    }

    pub fn cover(&self, genome: &Genome) -> Result<UnitMask, Error> {
        Ok(cover(genome, &self.binarized.schema, &self.binarized.matrix)?)
    }

    /// Metrics of the subgroup described by `genome`. The empty genome is the
    /// whole population, whose effect is the ATE.
    pub fn evaluate(&self, genome: &Genome) -> Result<SubgroupMetrics, Error> {
        let covered = self.cover(genome)?;
        self.evaluate_mask(&covered, antecedent_length(genome, &self.binarized.schema))
    }

    pub fn evaluate_mask(&self, covered: &UnitMask, length: usize) -> Result<SubgroupMetrics, Error> {
        self.metrics_with_min_group(covered, length, self.min_group)
    }

    pub fn metrics_with_min_group(
        &self,
        covered: &UnitMask,
        length: usize,
        min_group: usize,
    ) -> Result<SubgroupMetrics, Error> {
        let m = ArmMoments::collect(
            covered.iter(),
            self.dataset.treated(),
            self.dataset.outcome(),
            &self.weights,
        );
        m.check(min_group)?;
        Ok(SubgroupMetrics::from_moments(&m, self.n(), length))
    }
}
