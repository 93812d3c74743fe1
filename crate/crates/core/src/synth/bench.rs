use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::dataset::Genome;
use crate::discovery::{
    crowding_distance, discover, evaluate_feasible, non_dominated_sort, ParetoResult,
    RankedSubgroup, SearchParams,
};
use crate::{Error, Study};

pub const MAX_ORACLE_D: usize = 14;
pub const MAX_ORACLE_ATOMS: usize = 3;

/// Every genome with between 1 and `max_atoms` selected atoms, ordered by
/// atom count then lexicographically by atom indices.
pub fn enumerate_candidates(d: usize, max_atoms: usize) -> Vec<Genome> {
    fn rec(d: usize, start: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for j in start..d {
            cur.push(j);
            rec(d, j + 1, left - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    for k in 1..=max_atoms.min(d) {
        let mut sets = Vec::new();
        rec(d, 0, k, &mut Vec::new(), &mut sets);
        out.extend(sets.into_iter().map(|s| Genome::from_atoms(d, &s)));
    }
    out
}

/// The exact non-dominated set among all feasible genomes with at most
/// `max_atoms` atoms, under the coverage, length and objective settings of
/// `params`. Ordered by objective vector.
pub fn exhaustive_front(
    study: &Study,
    max_atoms: usize,
    params: &SearchParams,
) -> Result<Vec<RankedSubgroup>, Error> {
    let d = study.d();
    if d > MAX_ORACLE_D {
        return Err(SynthError::TooManyAtoms { d, max: MAX_ORACLE_D }.into());
    }
    if !(1..=MAX_ORACLE_ATOMS).contains(&max_atoms) {
        return Err(SynthError::MaxAtoms {
            got: max_atoms,
            max: MAX_ORACLE_ATOMS,
        }
        .into());
    }
    let min_coverage = params.validate(study.n(), d)?;
    let evaluated: Vec<RankedSubgroup> = enumerate_candidates(d, max_atoms)
        .into_par_iter()
        .filter_map(|g| {
            evaluate_feasible(study, &g, params, min_coverage).map(|(metrics, objectives)| RankedSubgroup {
                genome: g,
                metrics,
                objectives,
                rank: 0,
                crowding: 0.0,
            })
        })
        .collect();
    let fronts = non_dominated_sort(&evaluated.iter().map(|r| &r.objectives).collect::<Vec<_>>());
    let Some(first) = fronts.first() else {
        return Ok(Vec::new());
    };
    let objs: Vec<_> = first.iter().map(|&i| &evaluated[i].objectives).collect();
    let dist = crowding_distance(&objs);
    let mut front: Vec<RankedSubgroup> = first
        .iter()
        .zip(dist)
        .map(|(&i, c)| RankedSubgroup {
            crowding: c,
            ..evaluated[i].clone()
        })
        .collect();
    front.sort_by(|a, b| {
        a.objectives
            .0
            .iter()
            .zip(&b.objectives.0)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.genome.cmp(&b.genome))
    });
    Ok(front)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchMetrics {
    /// Share of the method's front not dominated by any pooled subgroup.
    pub precision: f64,
    pub n_subgroups: usize,
    pub avg_len: f64,
    /// Mean coverage in percent of all units.
    pub coverage_pct: f64,
}

/// Scores `method_front` against the pool of all compared fronts (the
/// method's own front is always part of the pool).
pub fn bench_metrics(
    method_front: &[RankedSubgroup],
    pooled_fronts: &[&[RankedSubgroup]],
) -> Result<BenchMetrics, SynthError> {
    if method_front.is_empty() {
        return Err(SynthError::EmptyFront);
    }
    let pool: Vec<&[f64]> = pooled_fronts
        .iter()
        .flat_map(|f| f.iter())
        .chain(method_front)
        .map(|r| r.objectives.0.as_slice())
        .collect();
    let true_dominating = method_front
        .iter()
        .filter(|r| {
            !pool
                .iter()
                .any(|p| crate::discovery::dominates(p, &r.objectives.0).unwrap_or(false))
        })
        .count();
    let s = method_front.len() as f64;
    Ok(BenchMetrics {
        precision: true_dominating as f64 / s,
        n_subgroups: method_front.len(),
        avg_len: method_front.iter().map(|r| r.metrics.length as f64).sum::<f64>() / s,
        coverage_pct: method_front.iter().map(|r| r.metrics.coverage_pct).sum::<f64>() / s,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub dataset: String,
    pub method: String,
    #[serde(flatten)]
    pub metrics: BenchMetrics,
}

/// Runs the genetic search and the exhaustive oracle on one study and
/// scores both against their pooled fronts. Rows are `ours` then `oracle`.
pub fn run_bench(
    study: &Study,
    params: &SearchParams,
    oracle_max_atoms: usize,
    dataset_name: &str,
) -> Result<(Vec<BenchRow>, ParetoResult, Vec<RankedSubgroup>), Error> {
    let result = discover(study, params)?;
    let oracle = exhaustive_front(study, oracle_max_atoms, params)?;
    let ga = result.front();
    let pooled: [&[RankedSubgroup]; 2] = [ga, &oracle];
    let mut rows = vec![BenchRow {
        dataset: dataset_name.to_string(),
        method: "ours".into(),
        metrics: bench_metrics(ga, &pooled)?,
    }];
    if !oracle.is_empty() {
        rows.push(BenchRow {
            dataset: dataset_name.to_string(),
            method: "oracle".into(),
            metrics: bench_metrics(&oracle, &pooled)?,
        });
    }
    Ok((rows, result, oracle))
}

/// `dataset,method,P,S,L,C` with one line per row.
pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("dataset,method,P,S,L,C\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.4},{},{:.4},{:.4}\n",
            r.dataset, r.method, r.metrics.precision, r.metrics.n_subgroups, r.metrics.avg_len, r.metrics.coverage_pct
        ));
    }
    out
}

/// A markdown table with one column group per method.
pub fn bench_markdown(rows: &[BenchRow]) -> String {
    let mut methods: Vec<&str> = Vec::new();
    let mut datasets: Vec<&str> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
        if !datasets.contains(&r.dataset.as_str()) {
            datasets.push(&r.dataset);
        }
    }
    let mut out = String::from("| Dataset |");
    for m in &methods {
        out.push_str(&format!(" {m} P | {m} S | {m} L | {m} C |"));
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(4 * methods.len()));
    out.push('\n');
    for ds in &datasets {
        out.push_str(&format!("| {ds} |"));
        for m in &methods {
            match rows.iter().find(|r| r.dataset == *ds && r.method == *m) {
                Some(r) => out.push_str(&format!(
                    " {:.2} | {} | {:.2} | {:.2} |",
                    r.metrics.precision, r.metrics.n_subgroups, r.metrics.avg_len, r.metrics.coverage_pct
                )),
                None => out.push_str(" - | - | - | - |"),
            }
        }
        out.push('\n');
    }
    out
}
