use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::DiscoveryError;
use crate::estimate::{SubgroupMetrics, DEFAULT_MIN_GROUP};

/// A search objective. Maximized objectives are negated once when the
/// objective vector is built.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    TauMax,
    Var0Min,
    Var1Min,
}

impl Objective {
    pub fn value(self, metrics: &SubgroupMetrics) -> f64 {
        match self {
            Objective::TauMax => -metrics.tau,
            Objective::Var0Min => metrics.var0,
            Objective::Var1Min => metrics.var1,
        }
    }
}

/// Minimum coverage, absolute or as a percentage of all units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Coverage {
    Count(usize),
    Percent(f64),
}

impl Coverage {
    pub fn resolve(self, n: usize) -> usize {
        match self {
            Coverage::Count(c) => c,
            Coverage::Percent(p) => (p / 100.0 * n as f64 - 1e-9).ceil().max(0.0) as usize,
        }
    }
}

impl std::str::FromStr for Coverage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Some(p) = s.strip_suffix('%') {
            let p: f64 = p.trim().parse().map_err(|_| format!("bad percentage {s:?}"))?;
            if !(0.0..=100.0).contains(&p) {
                return Err(format!("percentage out of range: {s:?}"));
            }
            Ok(Coverage::Percent(p))
        } else {
            s.parse::<usize>()
                .map(Coverage::Count)
                .map_err(|_| format!("bad coverage {s:?}: expected a count or \"N%\""))
        }
    }
}

impl Serialize for Coverage {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Coverage::Count(c) => serializer.serialize_u64(*c as u64),
            Coverage::Percent(p) => serializer.serialize_str(&format!("{p}%")),
        }
    }
}

impl<'de> Deserialize<'de> for Coverage {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Count(u64),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Count(c) => Ok(Coverage::Count(c as usize)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchParams {
    pub population: usize,
    pub generations: usize,
    /// Stop once the front-1 objective set is unchanged for this many
    /// consecutive generations.
    pub stagnation_window: usize,
    pub crossover_rate: f64,
    /// Per-bit flip probability; `None` means `1 / d`.
    pub mutation_rate: Option<f64>,
    pub min_coverage: Coverage,
    pub max_length: usize,
    pub seed: u64,
    pub objectives: Vec<Objective>,
    /// Minimum treated and control units per subgroup.
    pub min_group: usize,
    /// Expected number of selected atoms in an initial genome.
    pub init_atoms: f64,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            population: 100,
            generations: 100,
            stagnation_window: 10,
            crossover_rate: 0.9,
            mutation_rate: None,
            min_coverage: Coverage::Percent(5.0),
            max_length: 7,
            seed: 42,
            objectives: vec![Objective::TauMax, Objective::Var0Min, Objective::Var1Min],
            min_group: DEFAULT_MIN_GROUP,
            init_atoms: 2.0,
        }
    }
}

impl SearchParams {
    pub fn mutation_rate_for(&self, d: usize) -> f64 {
        self.mutation_rate.unwrap_or(1.0 / d.max(1) as f64)
    }

    /// Checks the parameter invariants for a dataset of `n` units and `d`
    /// atoms, returning the resolved minimum coverage count.
    pub fn validate(&self, n: usize, d: usize) -> Result<usize, DiscoveryError> {
        let bad = |msg: String| Err(DiscoveryError::InvalidParams(msg));
        if self.population < 4 || self.population % 2 != 0 {
            return bad(format!("population must be even and >= 4, got {}", self.population));
        }
        if !(self.crossover_rate > 0.0 && self.crossover_rate <= 1.0) {
            return bad(format!("crossover_rate must lie in (0, 1], got {}", self.crossover_rate));
        }
        let mr = self.mutation_rate_for(d);
        if !(mr > 0.0 && mr <= 1.0) {
            return bad(format!("mutation_rate must lie in (0, 1], got {mr}"));
        }
        if self.max_length < 1 {
            return bad("max_length must be >= 1".into());
        }
        if self.min_group < 1 {
            return bad("min_group must be >= 1".into());
        }
        if self.objectives.is_empty() {
            return bad("at least one objective is required".into());
        }
        for (i, o) in self.objectives.iter().enumerate() {
            if self.objectives[..i].contains(o) {
                return bad(format!("duplicate objective {o:?}"));
            }
        }
        if !(self.init_atoms > 0.0) {
            return bad("init_atoms must be positive".into());
        }
        if d == 0 {
            return bad("dataset has no atoms".into());
        }
        let c = self.min_coverage.resolve(n);
        if c < 2 * self.min_group {
            return bad(format!(
                "min_coverage resolves to {c} units, below 2 x min_group = {}",
                2 * self.min_group
            ));
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_params_json() {
        let p: SearchParams = serde_json::from_str(
            r#"{"population":100,"generations":100,"min_coverage":"5%","max_length":7,"seed":42,"objectives":["tau_max","var0_min","var1_min"]}"#,
        )
        .unwrap();
        assert_eq!(p, SearchParams::default());
        let p: SearchParams = serde_json::from_str(r#"{"min_coverage": 150}"#).unwrap();
        assert_eq!(p.min_coverage, Coverage::Count(150));
    }

    #[test]
    fn coverage_resolution() {
        assert_eq!(Coverage::Percent(5.0).resolve(3000), 150);
        assert_eq!(Coverage::Percent(5.0).resolve(2001), 101);
        assert_eq!(Coverage::Count(7).resolve(10), 7);
        assert!("abc".parse::<Coverage>().is_err());
        assert!("150%".parse::<Coverage>().is_err());
    }

    #[test]
    fn validation() {
        let p = SearchParams::default();
        assert_eq!(p.validate(3000, 30).unwrap(), 150);
        assert!(p.validate(100, 30).is_err()); // 5 units < 20
        let odd = SearchParams {
            population: 7,
            ..SearchParams::default()
        };
        assert!(odd.validate(3000, 30).is_err());
        let zero_len = SearchParams {
            max_length: 0,
            ..SearchParams::default()
        };
        assert!(zero_len.validate(3000, 30).is_err());
        let rate = SearchParams {
            crossover_rate: 1.5,
            ..SearchParams::default()
        };
        assert!(rate.validate(3000, 30).is_err());
    }
}
