//! JSON views of subgroups and search results.

use serde::{Deserialize, Serialize};

use crate::dataset::{AtomJson, AtomSchema, Genome, Origin, Subgroup};
use crate::discovery::{ParetoResult, RankedSubgroup, StopReason};
use crate::estimate::SubgroupMetrics;

/// Human-readable antecedent, e.g. `(c0 = a OR c0 = b) AND x1 > 0.5`.
pub fn describe(genome: &Genome, schema: &AtomSchema) -> String {
    let parts: Vec<String> = genome
        .covariates(schema)
        .into_iter()
        .map(|c| {
            let atoms: Vec<String> = schema
                .covariate_atoms(c)
                .filter(|&j| genome.get(j))
                .map(|j| schema.atom(j).to_string())
                .collect();
            if atoms.len() == 1 {
                atoms.into_iter().next().unwrap()
            } else {
                format!("({})", atoms.join(" OR "))
            }
        })
        .collect();
    if parts.is_empty() {
        "ALL".into()
    } else {
        parts.join(" AND ")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubgroupReport {
    pub id: String,
    pub origin: Origin,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub label: Option<String>,
    pub rule: String,
    pub atoms: Vec<AtomJson>,
    pub genome: String,
    pub metrics: SubgroupMetrics,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub objectives: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rank: Option<usize>,
    /// `null` for boundary members, whose crowding distance is infinite.
    #[serde(default)]
    pub crowding: Option<f64>,
}

impl SubgroupReport {
    pub fn new(subgroup: &Subgroup, schema: &AtomSchema, metrics: SubgroupMetrics) -> Self {
        let json = subgroup.to_json(schema);
        Self {
            id: subgroup.id.clone(),
            origin: subgroup.origin,
            label: subgroup.label.clone(),
            rule: describe(&subgroup.genome, schema),
            atoms: json.atoms,
            genome: subgroup.genome.to_bit_string(),
            metrics,
            objectives: None,
            rank: None,
            crowding: None,
        }
    }

    pub fn ranked(id: String, ranked: &RankedSubgroup, schema: &AtomSchema) -> Self {
        let subgroup = Subgroup::new(id, Origin::Discovered, ranked.genome.clone());
        Self {
            objectives: Some(ranked.objectives.0.clone()),
            rank: Some(ranked.rank),
            crowding: ranked.crowding.is_finite().then_some(ranked.crowding),
            ..Self::new(&subgroup, schema, ranked.metrics.clone())
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontReport {
    pub subgroups: Vec<SubgroupReport>,
    pub generations_run: usize,
    pub stop_reason: StopReason,
    pub restarts: usize,
    pub min_coverage: usize,
    pub evaluations: usize,
    /// Fronts 2 and beyond, when requested.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub diagnostics: Option<Vec<Vec<SubgroupReport>>>,
}

/// Front-1 subgroups get ids `s1, s2, ...`; diagnostic fronts `f2.1, ...`.
pub fn front_report(result: &ParetoResult, schema: &AtomSchema, all_fronts: bool) -> FrontReport {
    let subgroups = result
        .front()
        .iter()
        .enumerate()
        .map(|(k, r)| SubgroupReport::ranked(format!("s{}", k + 1), r, schema))
        .collect();
    let diagnostics = all_fronts.then(|| {
        result
            .fronts
            .iter()
            .enumerate()
            .skip(1)
            .map(|(f, front)| {
                front
                    .iter()
                    .enumerate()
                    .map(|(k, r)| SubgroupReport::ranked(format!("f{}.{}", f + 1, k + 1), r, schema))
                    .collect()
            })
            .collect()
    });
    FrontReport {
        subgroups,
        generations_run: result.generations_run,
        stop_reason: result.stop_reason,
        restarts: result.restarts,
        min_coverage: result.min_coverage,
        evaluations: result.evaluations,
        diagnostics,
    }
}
