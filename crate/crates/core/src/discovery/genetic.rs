//! Genome variation: random initialization, binary tournament selection,
//! single-point crossover, bit-flip mutation and length repair.

use rand::seq::SliceRandom;
use rand::Rng;

use super::SearchParams;
use crate::dataset::{AtomSchema, Genome};

/// A parent with its non-domination rank (0 = front 1) and crowding distance.
#[derive(Clone, Debug)]
pub struct Parent<'a> {
    pub genome: &'a Genome,
    pub rank: usize,
    pub crowding: f64,
}

/// Enforces `1 <= antecedent length <= max_length`: drops randomly chosen
/// covariates beyond the limit and selects one random atom in an empty
/// genome.
pub fn repair<R: Rng + ?Sized>(
    genome: &mut Genome,
    schema: &AtomSchema,
    max_length: usize,
    rng: &mut R,
) {
    let mut covs = genome.covariates(schema);
    if covs.len() > max_length {
        covs.shuffle(rng);
        for &c in &covs[max_length..] {
            for j in schema.covariate_atoms(c) {
                genome.set(j, false);
            }
        }
    }
    if genome.count_selected() == 0 && !genome.is_empty() {
        let j = rng.random_range(0..genome.len());
        genome.set(j, true);
    }
}

/// `population` genomes with independently sampled bits, each repaired.
pub fn initialize_population<R: Rng + ?Sized>(
    params: &SearchParams,
    schema: &AtomSchema,
    rng: &mut R,
) -> Vec<Genome> {
    let d = schema.d();
    let p = (params.init_atoms / d as f64).min(0.5);
    (0..params.population)
        .map(|_| {
            let mut g = Genome::from_bits((0..d).map(|_| rng.random_bool(p)).collect());
            repair(&mut g, schema, params.max_length, rng);
            g
        })
        .collect()
}

/// Children of a single-point crossover with the cut after `cut` bits.
pub fn crossover_at(a: &Genome, b: &Genome, cut: usize) -> (Genome, Genome) {
    let (a, b) = (a.bits(), b.bits());
    let c1 = a[..cut].iter().chain(&b[cut..]).copied().collect();
    let c2 = b[..cut].iter().chain(&a[cut..]).copied().collect();
    (Genome::from_bits(c1), Genome::from_bits(c2))
}

pub fn mutate<R: Rng + ?Sized>(genome: &mut Genome, rate: f64, rng: &mut R) {
    for j in 0..genome.len() {
        if rng.random_bool(rate) {
            genome.flip(j);
        }
    }
}

/// Binary tournament: lower rank wins, then larger crowding distance, then
/// the earlier parent.
pub fn tournament<R: Rng + ?Sized>(parents: &[Parent<'_>], rng: &mut R) -> usize {
    let a = rng.random_range(0..parents.len());
    let b = rng.random_range(0..parents.len());
    let (pa, pb) = (&parents[a], &parents[b]);
    let a_wins = match pa.rank.cmp(&pb.rank) {
        std::cmp::Ordering::Less => true,
        std::cmp::Ordering::Greater => false,
        std::cmp::Ordering::Equal => match pa.crowding.total_cmp(&pb.crowding) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => a <= b,
        },
    };
    if a_wins {
        a
    } else {
        b
    }
}

/// `params.population` offspring from tournament-selected parent pairs.
pub fn generate_offspring<R: Rng + ?Sized>(
    parents: &[Parent<'_>],
    params: &SearchParams,
    schema: &AtomSchema,
    rng: &mut R,
) -> Vec<Genome> {
    assert!(!parents.is_empty(), "offspring need at least one parent");
    let d = schema.d();
    let rate = params.mutation_rate_for(d);
    let mut out = Vec::with_capacity(params.population);
    while out.len() < params.population {
        let p1 = parents[tournament(parents, rng)].genome;
        let p2 = parents[tournament(parents, rng)].genome;
        let (mut c1, mut c2) = if d >= 2 && rng.random_bool(params.crossover_rate) {
            let cut = rng.random_range(1..d);
            crossover_at(p1, p2, cut)
        } else {
            (p1.clone(), p2.clone())
        };
        for child in [&mut c1, &mut c2] {
            mutate(child, rate, rng);
            repair(child, schema, params.max_length, rng);
        }
        out.push(c1);
        if out.len() < params.population {
            out.push(c2);
        }
    }
    out
}
