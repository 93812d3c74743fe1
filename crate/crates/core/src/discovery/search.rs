use std::collections::{HashMap, HashSet};
use std::ops::ControlFlow;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::genetic::{generate_offspring, initialize_population, Parent};
use super::pareto::{crowding_distance, non_dominated_sort, ObjectiveVector};
use super::{DiscoveryError, SearchParams};
use crate::dataset::{antecedent_length, Genome};
use crate::estimate::SubgroupMetrics;
use crate::Study;

const MAX_RESTARTS: usize = 5;

/// An evaluated, feasible subgroup with its position in the sorted population.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedSubgroup {
    pub genome: Genome,
    pub metrics: SubgroupMetrics,
    pub objectives: ObjectiveVector,
    /// 0 for front 1.
    pub rank: usize,
    pub crowding: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxGenerations,
    Stagnation,
    Cancelled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParetoResult {
    /// Front 1 first. Fronts after the first are diagnostics.
    pub fronts: Vec<Vec<RankedSubgroup>>,
    pub generations_run: usize,
    pub stop_reason: StopReason,
    pub restarts: usize,
    /// Minimum coverage in units, after resolving percentages.
    pub min_coverage: usize,
    /// Distinct genomes evaluated.
    pub evaluations: usize,
}

impl ParetoResult {
    pub fn front(&self) -> &[RankedSubgroup] {
        self.fronts.first().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Progress after each generation.
#[derive(Clone, Debug)]
pub struct GenerationReport {
    pub generation: usize,
    pub population: usize,
    pub front_size: usize,
    pub evaluations: usize,
}

/// Evaluates one genome against the constraints: `None` when it is empty,
/// too long, covers fewer than `min_coverage` units, or is not
/// identifiable.
pub fn evaluate_feasible(
    study: &Study,
    genome: &Genome,
    params: &SearchParams,
    min_coverage: usize,
) -> Option<(SubgroupMetrics, ObjectiveVector)> {
    let length = antecedent_length(genome, &study.binarized.schema);
    if length == 0 || length > params.max_length {
        return None;
    }
    let covered = study.cover(genome).ok()?;
    if covered.count() < min_coverage {
        return None;
    }
    let metrics = study.metrics_with_min_group(&covered, length, params.min_group).ok()?;
    let objectives = ObjectiveVector::new(params.objectives.iter().map(|o| o.value(&metrics)).collect());
    objectives.is_finite().then_some((metrics, objectives))
}

/// Runs the search to completion.
pub fn discover(study: &Study, params: &SearchParams) -> Result<ParetoResult, DiscoveryError> {
    discover_with(study, params, |_| ControlFlow::Continue(()))
}

/// Runs the search, calling `observer` after every generation; returning
/// `Break` cancels the run, which still yields the current fronts.
pub fn discover_with(
    study: &Study,
    params: &SearchParams,
    mut observer: impl FnMut(&GenerationReport) -> ControlFlow<()>,
) -> Result<ParetoResult, DiscoveryError> {
    let schema = &study.binarized.schema;
    let min_coverage = params.validate(study.n(), schema.d())?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut cache = Cache::default();
    let evaluate_new =
        |cache: &mut Cache, genomes, exclude: &HashSet<Genome>| cache.evaluate_new(study, params, min_coverage, genomes, exclude);

    let mut restarts = 0;
    let mut population = loop {
        let initial = initialize_population(params, schema, &mut rng);
        let feasible = evaluate_new(&mut cache, initial, &HashSet::new());
        if feasible.len() >= 2 {
            break feasible;
        }
        if restarts == MAX_RESTARTS {
            return Err(DiscoveryError::NoFeasible {
                attempts: MAX_RESTARTS + 1,
            });
        }
        restarts += 1;
    };
    population = select(population, params.population);

    let mut last_key = front_key(&population);
    let mut stagnant = 0;
    let mut generations_run = 0;
    let mut stop_reason = StopReason::MaxGenerations;
    while generations_run < params.generations {
        generations_run += 1;
        let parents: Vec<Parent> = population
            .iter()
            .map(|m| Parent {
                genome: &m.genome,
                rank: m.rank,
                crowding: m.crowding,
            })
            .collect();
        let offspring = generate_offspring(&parents, params, schema, &mut rng);
        let existing: HashSet<Genome> = population.iter().map(|m| m.genome.clone()).collect();
        let fresh = evaluate_new(&mut cache, offspring, &existing);
        population.extend(fresh);
        population = select(population, params.population);

        let key = front_key(&population);
        if key == last_key {
            stagnant += 1;
        } else {
            stagnant = 0;
            last_key = key;
        }
        let report = GenerationReport {
            generation: generations_run,
            population: population.len(),
            front_size: population.iter().filter(|m| m.rank == 0).count(),
            evaluations: cache.len(),
        };
        if observer(&report).is_break() {
            stop_reason = StopReason::Cancelled;
            break;
        }
        if stagnant >= params.stagnation_window {
            stop_reason = StopReason::Stagnation;
            break;
        }
    }

    Ok(ParetoResult {
        fronts: final_fronts(population),
        generations_run,
        stop_reason,
        restarts,
        min_coverage,
        evaluations: cache.len(),
    })
}

type Member = RankedSubgroup;

/// Results of every genome evaluated so far, feasible or not.
#[derive(Default)]
struct Cache(HashMap<Genome, Option<(SubgroupMetrics, ObjectiveVector)>>);

impl Cache {
    fn len(&self) -> usize {
        self.0.len()
    }

    /// Feasible members for the distinct genomes not in `exclude`, in
    /// first-occurrence order. New genomes are evaluated in parallel.
    fn evaluate_new(
        &mut self,
        study: &Study,
        params: &SearchParams,
        min_coverage: usize,
        genomes: Vec<Genome>,
        exclude: &HashSet<Genome>,
    ) -> Vec<Member> {
        let mut seen = HashSet::new();
        let fresh: Vec<Genome> = genomes
            .into_iter()
            .filter(|g| !exclude.contains(g) && seen.insert(g.clone()))
            .collect();
        let todo: Vec<&Genome> = fresh.iter().filter(|g| !self.0.contains_key(*g)).collect();
        let results: Vec<_> = todo
            .par_iter()
            .map(|g| evaluate_feasible(study, g, params, min_coverage))
            .collect();
        for (g, r) in todo.into_iter().zip(results) {
            self.0.insert(g.clone(), r);
        }
        fresh
            .into_iter()
            .filter_map(|g| {
                self.0[&g].clone().map(|(metrics, objectives)| Member {
                    genome: g,
                    metrics,
                    objectives,
                    rank: 0,
                    crowding: 0.0,
                })
            })
            .collect()
    }
}

/// Keeps the best `cap` members by front, then by crowding distance, and
/// records each survivor's rank and crowding.
pub(crate) fn select(pool: Vec<Member>, cap: usize) -> Vec<Member> {
    let fronts = non_dominated_sort(&pool.iter().map(|m| &m.objectives).collect::<Vec<_>>());
    let mut slots: Vec<Option<Member>> = pool.into_iter().map(Some).collect();
    let mut out = Vec::with_capacity(cap);
    for (rank, front) in fronts.iter().enumerate() {
        if out.len() >= cap {
            break;
        }
        let objs: Vec<&ObjectiveVector> = front.iter().map(|&i| &slots[i].as_ref().unwrap().objectives).collect();
        let dist = crowding_distance(&objs);
        let mut order: Vec<usize> = (0..front.len()).collect();
        if out.len() + front.len() > cap {
            order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
            order.truncate(cap - out.len());
        }
        for k in order {
            let mut m = slots[front[k]].take().unwrap();
            m.rank = rank;
            m.crowding = dist[k];
            out.push(m);
        }
    }
    out
}

fn front_key(population: &[Member]) -> Vec<Vec<u64>> {
    let mut key: Vec<Vec<u64>> = population
        .iter()
        .filter(|m| m.rank == 0)
        .map(|m| m.objectives.bit_key())
        .collect();
    key.sort();
    key
}

/// Re-sorts the final population into fronts, each ordered by objective
/// vector then genome.
fn final_fronts(population: Vec<Member>) -> Vec<Vec<RankedSubgroup>> {
    let fronts = non_dominated_sort(&population.iter().map(|m| &m.objectives).collect::<Vec<_>>());
    let mut slots: Vec<Option<Member>> = population.into_iter().map(Some).collect();
    fronts
        .iter()
        .enumerate()
        .map(|(rank, front)| {
            let objs: Vec<&ObjectiveVector> = front.iter().map(|&i| &slots[i].as_ref().unwrap().objectives).collect();
            let dist = crowding_distance(&objs);
            let mut members: Vec<Member> = front
                .iter()
                .zip(dist)
                .map(|(&i, crowding)| {
                    let mut m = slots[i].take().unwrap();
                    m.rank = rank;
                    m.crowding = crowding;
                    m
                })
                .collect();
            members.sort_by(|a, b| {
                a.objectives
                    .0
                    .iter()
                    .zip(&b.objectives.0)
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then_with(|| a.genome.cmp(&b.genome))
            });
            members
        })
        .collect()
}
