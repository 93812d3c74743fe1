//! Discovery, estimation and explanation of subgroups with heterogeneous
//! treatment effects in observational data.
//!
//! The pipeline:
//!
//! 1. [`dataset`]: ingest a CSV, binarize covariates into atoms, and describe
//!    subgroups as atom selections.
//! 2. [`estimate`]: fit propensity scores and compute each subgroup's
//!    IPW effect and per-arm outcome variances.
//! 3. [`discovery`]: search the Pareto front of subgroups that maximize the
//!    effect and minimize both variances under coverage and length limits.
//! 4. [`matching`]: explain a subgroup's effect with caliper matching on
//!    propensity scores.
//! 5. [`projection`]: lay units out in 2-D with non-metric MDS.
//! 6. [`synth`]: synthetic data with known ground truth, an exhaustive
//!    front oracle, and benchmark metrics.

pub mod dataset;
pub mod discovery;
pub mod estimate;
pub mod mask;
pub mod matching;
pub mod projection;
pub mod report;
pub mod study;
pub mod synth;

pub use study::Study;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Dataset(#[from] dataset::DatasetError),
    #[error(transparent)]
    Estimate(#[from] estimate::EstimateError),
    #[error(transparent)]
    Discovery(#[from] discovery::DiscoveryError),
    #[error(transparent)]
    Matching(#[from] matching::MatchingError),
    #[error(transparent)]
    Projection(#[from] projection::ProjectionError),
    #[error(transparent)]
    Synth(#[from] synth::SynthError),
}
