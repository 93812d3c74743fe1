//! Propensity modeling and IPW subgroup estimation.

mod ipw;
mod propensity;

pub use ipw::{
    estimate_cate, estimate_variances, ipw_weights, ArmMoments, SubgroupMetrics, WeightedMoments,
    DEFAULT_MIN_GROUP,
};
pub use propensity::{fit_propensity, PropensityModel, PropensityParams};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error(
        "effect not identifiable for this subgroup: {n_treated} treated and {n_control} control units, need at least {min_group} of each"
    )]
    NotIdentifiable {
        n_treated: usize,
        n_control: usize,
        min_group: usize,
    },
    #[error("propensity model needs both treated and control units")]
    SingleClass,
    #[error("dimension mismatch: got {got}, expected {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}
