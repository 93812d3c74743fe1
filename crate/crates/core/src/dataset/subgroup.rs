//! Rule-described subgroups.
//!
//! A genome selects atoms. Selected atoms of the same covariate combine
//! disjunctively, distinct covariates conjunctively, so
//! `{age in (10,25], age in (25,40], sex = female}` reads
//! `(10 < age <= 40) AND sex = female`.

use serde::{Deserialize, Serialize};

use super::{AtomPredicate, AtomSchema, BinaryAtomMatrix, DatasetError};
use crate::mask::UnitMask;

/// Atom-selection bit vector.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Genome(Vec<bool>);

impl Genome {
    pub fn empty(d: usize) -> Self {
        Genome(vec![false; d])
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        Genome(bits)
    }

    pub fn from_atoms(d: usize, atoms: &[usize]) -> Self {
        let mut g = Genome::empty(d);
        for &j in atoms {
            g.0[j] = true;
        }
        g
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn get(&self, j: usize) -> bool {
        self.0[j]
    }

    pub fn set(&mut self, j: usize, value: bool) {
        self.0[j] = value;
    }

    pub fn flip(&mut self, j: usize) {
        self.0[j] = !self.0[j];
    }

    pub fn selected(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, &b)| b).map(|(j, _)| j)
    }

    pub fn count_selected(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    /// Covariates with at least one selected atom, ascending.
    pub fn covariates(&self, schema: &AtomSchema) -> Vec<usize> {
        (0..schema.n_covariates())
            .filter(|&c| schema.covariate_atoms(c).any(|j| self.0[j]))
            .collect()
    }

    /// Bit string such as `0110`, used as a stable key.
    pub fn to_bit_string(&self) -> String {
        self.0.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    /// Inverse of [`Genome::to_bit_string`]; `None` on any other character.
    pub fn from_bit_string(s: &str) -> Option<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Some(false),
                '1' => Some(true),
                _ => None,
            })
            .collect::<Option<Vec<bool>>>()
            .map(Self)
    }
}

fn check_dim(genome: &Genome, schema: &AtomSchema) -> Result<(), DatasetError> {
    if genome.len() != schema.d() {
        return Err(DatasetError::DimensionMismatch {
            got: genome.len(),
            expected: schema.d(),
        });
    }
    Ok(())
}

/// Number of distinct covariates used by the antecedent.
pub fn antecedent_length(genome: &Genome, schema: &AtomSchema) -> usize {
    (0..schema.n_covariates())
        .filter(|&c| schema.covariate_atoms(c).any(|j| genome.get(j)))
        .count()
}

/// Units covered by the genome's antecedent. An empty genome covers every
/// unit.
pub fn cover(
    genome: &Genome,
    schema: &AtomSchema,
    matrix: &BinaryAtomMatrix,
) -> Result<UnitMask, DatasetError> {
    check_dim(genome, schema)?;
    if matrix.cols() != schema.d() {
        return Err(DatasetError::DimensionMismatch {
            got: matrix.cols(),
            expected: schema.d(),
        });
    }
    let mut covered = UnitMask::full(matrix.rows());
    for c in 0..schema.n_covariates() {
        let mut any: Option<UnitMask> = None;
        for j in schema.covariate_atoms(c).filter(|&j| genome.get(j)) {
            match any.as_mut() {
                Some(m) => m.union_with(matrix.atom_mask(j)),
                None => any = Some(matrix.atom_mask(j).clone()),
            }
        }
        if let Some(m) = any {
            covered.intersect_with(&m);
        }
    }
    Ok(covered)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    Discovered,
    UserDefined,
    Merged,
    Split,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Subgroup {
    pub id: String,
    pub origin: Origin,
    pub label: Option<String>,
    pub genome: Genome,
}

impl Subgroup {
    pub fn new(id: impl Into<String>, origin: Origin, genome: Genome) -> Self {
        Self {
            id: id.into(),
            origin,
            label: None,
            genome,
        }
    }

    pub fn to_json(&self, schema: &AtomSchema) -> SubgroupJson {
        let atoms = self
            .genome
            .selected()
            .map(|j| {
                let atom = schema.atom(j);
                match &atom.predicate {
                    AtomPredicate::Equals(v) => AtomJson::Eq {
                        covariate: atom.covariate_name.clone(),
                        value: v.clone(),
                    },
                    AtomPredicate::Interval { lo, hi } => AtomJson::InRange {
                        covariate: atom.covariate_name.clone(),
                        value: [finite(*lo), finite(*hi)],
                    },
                }
            })
            .collect();
        SubgroupJson {
            id: self.id.clone(),
            origin: self.origin,
            label: self.label.clone(),
            atoms,
        }
    }

    /// Resolves a JSON antecedent against the atom grid. Numeric ranges are
    /// snapped outward to the atoms they overlap; the returned flag tells
    /// whether any snapping changed the requested bounds.
    pub fn from_json(json: &SubgroupJson, schema: &AtomSchema) -> Result<(Self, bool), DatasetError> {
        let mut genome = Genome::empty(schema.d());
        let mut snapped = false;
        for atom in &json.atoms {
            let name = atom.covariate();
            let c = schema
                .covariate_index(name)
                .ok_or_else(|| DatasetError::UnknownCovariate(name.to_string()))?;
            let range = schema.covariate_atoms(c);
            let numeric = matches!(
                schema.atom(range.start).predicate,
                AtomPredicate::Interval { .. }
            );
            match atom {
                AtomJson::Eq { value, .. } => {
                    if numeric {
                        return Err(DatasetError::InvalidAtom {
                            covariate: name.to_string(),
                            reason: "eq on a numerical covariate; use in_range".into(),
                        });
                    }
                    let j = schema.find_value(c, value).ok_or_else(|| DatasetError::UnknownValue {
                        covariate: name.to_string(),
                        value: value.clone(),
                    })?;
                    genome.set(j, true);
                }
                AtomJson::InRange { value: [lo, hi], .. } => {
                    if !numeric {
                        return Err(DatasetError::InvalidAtom {
                            covariate: name.to_string(),
                            reason: "in_range on a categorical covariate; use eq".into(),
                        });
                    }
                    let lo = lo.unwrap_or(f64::NEG_INFINITY);
                    let hi = hi.unwrap_or(f64::INFINITY);
                    if lo.is_nan() || hi.is_nan() || lo >= hi {
                        return Err(DatasetError::InvalidAtom {
                            covariate: name.to_string(),
                            reason: format!("empty range ({lo}, {hi}]"),
                        });
                    }
                    let mut union_lo = f64::INFINITY;
                    let mut union_hi = f64::NEG_INFINITY;
                    for j in range {
                        if let AtomPredicate::Interval { lo: a_lo, hi: a_hi } = schema.atom(j).predicate {
                            if a_lo < hi && lo < a_hi {
                                genome.set(j, true);
                                union_lo = union_lo.min(a_lo);
                                union_hi = union_hi.max(a_hi);
                            }
                        }
                    }
                    if union_lo != lo || union_hi != hi {
                        snapped = true;
                    }
                }
            }
        }
        Ok((
            Subgroup {
                id: json.id.clone(),
                origin: json.origin,
                label: json.label.clone(),
                genome,
            },
            snapped,
        ))
    }
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

/// Serialized form of a subgroup antecedent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubgroupJson {
    #[serde(default)]
    pub id: String,
    #[serde(default = "user_defined")]
    pub origin: Origin,
    #[serde(default)]
    pub label: Option<String>,
    pub atoms: Vec<AtomJson>,
}

fn user_defined() -> Origin {
    Origin::UserDefined
}

/// One atom: `{"covariate", "op": "eq", "value": "red"}` or
/// `{"covariate", "op": "in_range", "value": [lo, hi]}` with `null` for an
/// unbounded end.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum AtomJson {
    Eq { covariate: String, value: String },
    InRange { covariate: String, value: [Option<f64>; 2] },
}

impl AtomJson {
    pub fn covariate(&self) -> &str {
        match self {
            AtomJson::Eq { covariate, .. } | AtomJson::InRange { covariate, .. } => covariate,
        }
    }
}

/// Unions the atom sets of covariates present in both antecedents and drops
/// covariates present in only one, so the result covers at least the union
/// of both inputs.
pub fn merge_subgroups(
    a: &Subgroup,
    b: &Subgroup,
    schema: &AtomSchema,
) -> Result<Subgroup, DatasetError> {
    check_dim(&a.genome, schema)?;
    check_dim(&b.genome, schema)?;
    let in_a = a.genome.covariates(schema);
    let in_b = b.genome.covariates(schema);
    let mut genome = Genome::empty(schema.d());
    let mut shared = 0;
    for c in in_a.iter().filter(|c| in_b.contains(c)) {
        shared += 1;
        for j in schema.covariate_atoms(*c) {
            if a.genome.get(j) || b.genome.get(j) {
                genome.set(j, true);
            }
        }
    }
    if shared == 0 {
        return Err(DatasetError::NothingToMerge);
    }
    Ok(Subgroup::new(format!("{}+{}", a.id, b.id), Origin::Merged, genome))
}

/// Splits the selected atoms of one covariate into two halves by atom order
/// (the first half gets the extra atom when the count is odd).
pub fn split_subgroup(
    s: &Subgroup,
    covariate: &str,
    schema: &AtomSchema,
) -> Result<(Subgroup, Subgroup), DatasetError> {
    check_dim(&s.genome, schema)?;
    let c = schema
        .covariate_index(covariate)
        .ok_or_else(|| DatasetError::UnknownCovariate(covariate.to_string()))?;
    let selected: Vec<usize> = schema
        .covariate_atoms(c)
        .filter(|&j| s.genome.get(j))
        .collect();
    if selected.len() < 2 {
        return Err(DatasetError::CannotSplit(covariate.to_string()));
    }
    let cut = selected.len().div_ceil(2);
    let mut first = s.genome.clone();
    let mut second = s.genome.clone();
    for &j in &selected[cut..] {
        first.set(j, false);
    }
    for &j in &selected[..cut] {
        second.set(j, false);
    }
    Ok((
        Subgroup::new(format!("{}.1", s.id), Origin::Split, first),
        Subgroup::new(format!("{}.2", s.id), Origin::Split, second),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{binarize, Binarized, Column, ObservationalDataset};

    /// age quartile edges land on 10, 25 and 40.
    fn fixture() -> (ObservationalDataset, Binarized) {
        let age = vec![5.0, 10.0, 20.0, 25.0, 30.0, 40.0, 50.0, 60.0];
        let sex = ["female", "male", "female", "male", "female", "female", "male", "male"];
        let job = ["blue-collar", "retired", "admin", "retired", "admin", "blue-collar", "admin", "retired"];
        let ds = ObservationalDataset::new(
            (0..8).collect(),
            vec!["age".into(), "sex".into(), "job".into()],
            vec![
                Column::Numerical(age),
                Column::categorical_from_labels(&sex),
                Column::categorical_from_labels(&job),
            ],
            (0..8).map(|i| i % 2 == 0).collect(),
            vec![0.0; 8],
            "T",
            "Y",
        )
        .unwrap();
        let b = binarize(&ds, 4).unwrap();
        (ds, b)
    }

    fn json(atoms: Vec<AtomJson>) -> SubgroupJson {
        SubgroupJson {
            id: "q".into(),
            origin: Origin::UserDefined,
            label: None,
            atoms,
        }
    }

    fn range(cov: &str, lo: f64, hi: f64) -> AtomJson {
        AtomJson::InRange {
            covariate: cov.into(),
            value: [Some(lo), Some(hi)],
        }
    }

    fn eq(cov: &str, v: &str) -> AtomJson {
        AtomJson::Eq {
            covariate: cov.into(),
            value: v.into(),
        }
    }

    fn parse(b: &Binarized, atoms: Vec<AtomJson>) -> Subgroup {
        Subgroup::from_json(&json(atoms), &b.schema).unwrap().0
    }

    #[test]
    fn cover_conjunction_across_covariates() {
        let (_, b) = fixture();
        let s = parse(&b, vec![range("age", 10.0, 25.0), eq("sex", "female")]);
        let covered = cover(&s.genome, &b.schema, &b.matrix).unwrap();
        // unit 2: age 20, female
        assert!(covered.contains(2));
        // unit 4: age 30, female
        assert!(!covered.contains(4));
        assert_eq!(covered.iter().collect::<Vec<_>>(), vec![2]);
    }

    #[test]
    fn cover_disjunction_within_covariate() {
        let (_, b) = fixture();
        let s = parse(&b, vec![eq("job", "blue-collar"), eq("job", "retired")]);
        let covered = cover(&s.genome, &b.schema, &b.matrix).unwrap();
        assert!(covered.contains(1)); // retired
        assert!(!covered.contains(2)); // admin
        assert_eq!(covered.count(), 5);
    }

    #[test]
    fn empty_genome_covers_all() {
        let (_, b) = fixture();
        let g = Genome::empty(b.schema.d());
        assert_eq!(cover(&g, &b.schema, &b.matrix).unwrap().count(), 8);
        assert_eq!(antecedent_length(&g, &b.schema), 0);
    }

    #[test]
    fn cover_dimension_mismatch() {
        let (_, b) = fixture();
        assert!(matches!(
            cover(&Genome::empty(3), &b.schema, &b.matrix),
            Err(DatasetError::DimensionMismatch { got: 3, .. })
        ));
    }

    #[test]
    fn antecedent_length_counts_covariates() {
        let (_, b) = fixture();
        let s = parse(&b, vec![range("age", 10.0, 25.0), eq("sex", "female")]);
        assert_eq!(antecedent_length(&s.genome, &b.schema), 2);
        let s = parse(&b, vec![range("age", f64::MIN, 40.0)]);
        assert_eq!(s.genome.count_selected(), 3);
        assert_eq!(antecedent_length(&s.genome, &b.schema), 1);
    }

    #[test]
    fn merge_unions_shared_covariates() {
        let (_, b) = fixture();
        let a = parse(&b, vec![range("age", 10.0, 25.0)]);
        let c = parse(&b, vec![range("age", 25.0, 40.0)]);
        let m = merge_subgroups(&a, &c, &b.schema).unwrap();
        assert_eq!(m.origin, Origin::Merged);
        assert_eq!(m.genome, parse(&b, vec![range("age", 10.0, 40.0)]).genome);

        let a = parse(&b, vec![range("age", 10.0, 25.0), eq("sex", "female")]);
        let m = merge_subgroups(&a, &c, &b.schema).unwrap();
        assert_eq!(m.genome, parse(&b, vec![range("age", 10.0, 40.0)]).genome);
    }

    #[test]
    fn merge_without_shared_covariate_fails() {
        let (_, b) = fixture();
        let a = parse(&b, vec![eq("sex", "female")]);
        let c = parse(&b, vec![eq("job", "admin")]);
        assert!(matches!(
            merge_subgroups(&a, &c, &b.schema),
            Err(DatasetError::NothingToMerge)
        ));
        let e = Subgroup::new("e", Origin::UserDefined, Genome::empty(b.schema.d()));
        assert!(merge_subgroups(&e, &e, &b.schema).is_err());
    }

    #[test]
    fn split_halves_atoms() {
        let (_, b) = fixture();
        let s = parse(&b, vec![range("age", 10.0, 40.0)]);
        let (x, y) = split_subgroup(&s, "age", &b.schema).unwrap();
        assert_eq!(x.genome, parse(&b, vec![range("age", 10.0, 25.0)]).genome);
        assert_eq!(y.genome, parse(&b, vec![range("age", 25.0, 40.0)]).genome);
        assert_eq!(x.origin, Origin::Split);

        let s = parse(&b, vec![eq("job", "admin"), eq("job", "blue-collar"), eq("job", "retired")]);
        let (x, y) = split_subgroup(&s, "job", &b.schema).unwrap();
        assert_eq!(x.genome.count_selected(), 2);
        assert_eq!(y.genome, parse(&b, vec![eq("job", "retired")]).genome);

        let single = parse(&b, vec![eq("job", "admin")]);
        assert!(matches!(
            split_subgroup(&single, "job", &b.schema),
            Err(DatasetError::CannotSplit(_))
        ));
        assert!(split_subgroup(&single, "sex", &b.schema).is_err());
    }

    #[test]
    fn range_snaps_to_grid() {
        let (_, b) = fixture();
        let (s, snapped) = Subgroup::from_json(&json(vec![range("age", 12.0, 30.0)]), &b.schema).unwrap();
        assert!(snapped);
        assert_eq!(s.genome, parse(&b, vec![range("age", 10.0, 40.0)]).genome);
        let (_, snapped) = Subgroup::from_json(&json(vec![range("age", 10.0, 25.0)]), &b.schema).unwrap();
        assert!(!snapped);
    }

    #[test]
    fn json_round_trip_and_errors() {
        let (_, b) = fixture();
        let s = parse(&b, vec![range("age", 10.0, 25.0), eq("sex", "female")]);
        let text = serde_json::to_string(&s.to_json(&b.schema)).unwrap();
        assert!(text.contains(r#""op":"in_range""#));
        let back: SubgroupJson = serde_json::from_str(&text).unwrap();
        assert_eq!(Subgroup::from_json(&back, &b.schema).unwrap().0, s);

        for bad in [
            vec![eq("age", "3")],
            vec![range("sex", 0.0, 1.0)],
            vec![eq("sex", "other")],
            vec![eq("height", "x")],
            vec![range("age", 5.0, 5.0)],
        ] {
            assert!(Subgroup::from_json(&json(bad), &b.schema).is_err());
        }
    }
}
