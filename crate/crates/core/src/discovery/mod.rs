//! Constrained multi-objective subgroup search.
//!
//! A genetic search over atom-selection genomes: random initialization,
//! offspring by crossover and bit flips, elimination of infeasible and
//! duplicate genomes, then survival by non-domination rank and crowding
//! distance. Front 1 of the final population is the answer.

mod genetic;
mod params;
mod pareto;
mod search;

pub use genetic::{
    crossover_at, generate_offspring, initialize_population, mutate, repair, tournament, Parent,
};
pub use params::{Coverage, Objective, SearchParams};
pub use pareto::{crowding_distance, dominates, non_dominated_sort, ObjectiveVector};
pub use search::{
    discover, discover_with, evaluate_feasible, GenerationReport, ParetoResult, RankedSubgroup,
    StopReason,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiscoveryError {
    #[error("objective vectors differ in length ({left} vs {right})")]
    ObjectiveDimension { left: usize, right: usize },
    #[error("invalid search parameters: {0}")]
    InvalidParams(String),
    #[error("no feasible subgroup after {attempts} initializations; the coverage or length constraints are too tight")]
    NoFeasible { attempts: usize },
}
