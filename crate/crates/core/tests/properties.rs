mod common;

use common::{naive_dominates, naive_fronts};
use cprism_core::dataset::{binarize, cover, AtomPredicate, Column, Genome, ObservationalDataset};
use cprism_core::discovery::{crowding_distance, dominates, non_dominated_sort};
use cprism_core::estimate::{estimate_cate, estimate_variances, ipw_weights};
use cprism_core::mask::UnitMask;
use cprism_core::matching::{match_units, propensity_histogram, sample_pairs_for_display, MatchedPair};
use cprism_core::projection::{nmds, DistanceMatrix, NmdsParams};
use proptest::prelude::*;

fn small_vec(m: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((0i32..5).prop_map(f64::from), m)
}

proptest! {
    #[test]
    fn dominance_is_a_strict_partial_order(a in small_vec(3), b in small_vec(3), c in small_vec(3)) {
        prop_assert!(!dominates(&a, &a).unwrap());
        if dominates(&a, &b).unwrap() {
            prop_assert!(!dominates(&b, &a).unwrap());
            if dominates(&b, &c).unwrap() {
                prop_assert!(dominates(&a, &c).unwrap());
            }
        }
        prop_assert_eq!(dominates(&a, &b).unwrap(), naive_dominates(&a, &b));
    }

    #[test]
    fn sorting_matches_peeling(points in prop::collection::vec(small_vec(3), 1..60)) {
        let fronts = non_dominated_sort(&points);
        prop_assert_eq!(&fronts, &naive_fronts(&points));
        let mut all: Vec<usize> = fronts.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..points.len()).collect::<Vec<_>>());
    }

    #[test]
    fn crowding_marks_extremes(points in prop::collection::vec(small_vec(2), 1..30)) {
        let d = crowding_distance(&points);
        prop_assert!(d.iter().all(|&v| v >= 0.0));
        for k in 0..2 {
            let min = points.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
            let first = points.iter().position(|p| p[k] == min).unwrap();
            prop_assert!(d[first].is_infinite());
        }
    }
}

/// Random small observational data: (treated, outcome, scores).
fn arms() -> impl Strategy<Value = (Vec<bool>, Vec<f64>, Vec<f64>)> {
    (4usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(any::<bool>(), n),
            prop::collection::vec(-50.0f64..50.0, n),
            prop::collection::vec(0.01f64..0.99, n),
        )
    })
    .prop_filter("both arms", |(t, _, _)| t.iter().filter(|&&b| b).count() >= 2 && t.iter().filter(|&&b| !b).count() >= 2)
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #[test]
    fn equal_scores_give_difference_of_means((t, y, _) in arms(), e in 0.05f64..0.95) {
        let n = t.len();
        let w = ipw_weights(&t, &vec![e; n]);
        let tau = estimate_cate(&UnitMask::full(n), &t, &y, &w, 1).unwrap();
        let mean = |arm: bool| {
            let v: Vec<f64> = (0..n).filter(|&i| t[i] == arm).map(|i| y[i]).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        prop_assert!(rel_close(tau, mean(true) - mean(false), 1e-9));
        let (v0, v1) = estimate_variances(&UnitMask::full(n), &t, &y, &w, 1).unwrap();
        let pop_var = |arm: bool| {
            let v: Vec<f64> = (0..n).filter(|&i| t[i] == arm).map(|i| y[i]).collect();
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64
        };
        prop_assert!(rel_close(v0, pop_var(false), 1e-9));
        prop_assert!(rel_close(v1, pop_var(true), 1e-9));
    }

    #[test]
    fn estimates_are_order_duplication_shift_and_scale_consistent(
        (t, y, e) in arms(), shift in -10.0f64..10.0, scale in 0.1f64..5.0, rot in 0usize..40,
    ) {
        let n = t.len();
        let all = UnitMask::full(n);
        let w = ipw_weights(&t, &e);
        let tau = estimate_cate(&all, &t, &y, &w, 1).unwrap();
        let (v0, v1) = estimate_variances(&all, &t, &y, &w, 1).unwrap();
        prop_assert!(v0 >= 0.0 && v1 >= 0.0);

        let order: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
        let pt: Vec<bool> = order.iter().map(|&i| t[i]).collect();
        let py: Vec<f64> = order.iter().map(|&i| y[i]).collect();
        let pw: Vec<f64> = order.iter().map(|&i| w[i]).collect();
        prop_assert!(rel_close(estimate_cate(&all, &pt, &py, &pw, 1).unwrap(), tau, 1e-9));

        let dt = [t.clone(), t.clone()].concat();
        let dy = [y.clone(), y.clone()].concat();
        let dw = [w.clone(), w.clone()].concat();
        let dall = UnitMask::full(2 * n);
        prop_assert!(rel_close(estimate_cate(&dall, &dt, &dy, &dw, 1).unwrap(), tau, 1e-9));

        let sy: Vec<f64> = y.iter().map(|v| v + shift).collect();
        prop_assert!((estimate_cate(&all, &t, &sy, &w, 1).unwrap() - tau).abs() < 1e-9 * (1.0 + tau.abs() + shift.abs()));
        let (s0, s1) = estimate_variances(&all, &t, &sy, &w, 1).unwrap();
        prop_assert!(rel_close(s0, v0, 1e-7) && rel_close(s1, v1, 1e-7));

        let ky: Vec<f64> = y.iter().map(|v| v * scale).collect();
        prop_assert!(rel_close(estimate_cate(&all, &t, &ky, &w, 1).unwrap(), tau * scale, 1e-9));
        let (k0, k1) = estimate_variances(&all, &t, &ky, &w, 1).unwrap();
        prop_assert!(rel_close(k0, v0 * scale * scale, 1e-9) && rel_close(k1, v1 * scale * scale, 1e-9));
    }

    #[test]
    fn clipped_weights_are_bounded(t in prop::collection::vec(any::<bool>(), 1..50), e in prop::collection::vec(0.0f64..1.0, 50)) {
        let scores: Vec<f64> = e[..t.len()].iter().map(|v| v.clamp(0.01, 0.99)).collect();
        prop_assert!(ipw_weights(&t, &scores).iter().all(|&w| w > 0.0 && w <= 100.0 + 1e-9));
    }
}

fn mixed_dataset(n: usize, cat: Vec<u8>, num: Vec<f64>) -> ObservationalDataset {
    let labels: Vec<String> = cat.iter().map(|c| format!("v{c}")).collect();
    ObservationalDataset::new(
        (0..n as u64).collect(),
        vec!["c".into(), "x".into()],
        vec![Column::categorical_from_labels(&labels), Column::Numerical(num)],
        (0..n).map(|i| i % 2 == 0).collect(),
        vec![0.0; n],
        "T",
        "Y",
    )
    .unwrap()
}

fn mixed() -> impl Strategy<Value = ObservationalDataset> {
    (6usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec(0u8..4, n),
            prop::collection::vec((-20i32..20).prop_map(|v| f64::from(v) / 4.0), n),
        )
            .prop_map(move |(c, x)| mixed_dataset(n, c, x))
    })
}

proptest! {
    #[test]
    fn atoms_match_naive_filters(ds in mixed(), buckets in 2usize..6) {
        let b = binarize(&ds, buckets).unwrap();
        let Column::Numerical(x) = &ds.columns()[1] else { unreachable!() };
        for c in 0..b.schema.n_covariates() {
            // every unit sits in exactly one atom of each covariate
            for i in 0..ds.n() {
                prop_assert_eq!(b.schema.covariate_atoms(c).filter(|&j| b.matrix.bit(i, j)).count(), 1);
            }
        }
        for j in 0..b.schema.d() {
            let atom = b.schema.atom(j);
            let naive: Vec<bool> = (0..ds.n())
                .map(|i| match &atom.predicate {
                    AtomPredicate::Equals(v) => ds.value(i, 0).to_string() == *v,
                    AtomPredicate::Interval { lo, hi } => x[i] > *lo && x[i] <= *hi,
                })
                .collect();
            prop_assert!(naive.iter().any(|&v| v), "atom {} covers nobody", atom);
            let got: Vec<bool> = (0..ds.n()).map(|i| b.matrix.atom_mask(j).contains(i)).collect();
            prop_assert_eq!(got, naive);
        }
    }

    #[test]
    fn cover_shrinks_with_new_covariates_and_grows_within_one(ds in mixed(), bits in prop::collection::vec(any::<bool>(), 16), pick in 0usize..16) {
        let b = binarize(&ds, 3).unwrap();
        let d = b.schema.d();
        let g = Genome::from_bits(bits[..d.min(16)].iter().copied().chain(std::iter::repeat(false)).take(d).collect());
        let j = pick % d;
        prop_assume!(!g.get(j));
        let base = cover(&g, &b.schema, &b.matrix).unwrap();
        let mut h = g.clone();
        h.set(j, true);
        let grown = cover(&h, &b.schema, &b.matrix).unwrap();
        let c = b.schema.atom(j).covariate;
        if b.schema.covariate_atoms(c).any(|k| g.get(k)) {
            prop_assert!(base.is_subset(&grown));
        } else {
            prop_assert!(grown.is_subset(&base));
        }
    }
}

/// Greedy matching by exhaustive scan, written independently of the
/// ordered-set implementation.
fn naive_match(ids_t: &[usize], ids_c: &[usize], e: &[f64], eps: f64) -> Vec<(usize, usize)> {
    let mut used = vec![false; e.len()];
    let mut out = Vec::new();
    for &t in ids_t {
        let mut best: Option<(f64, usize)> = None;
        for &c in ids_c {
            if used[c] {
                continue;
            }
            let gap = (e[t] - e[c]).abs();
            if best.is_none_or(|(g, id)| gap < g || (gap == g && c < id)) {
                best = Some((gap, c));
            }
        }
        if let Some((gap, c)) = best {
            if gap <= eps {
                used[c] = true;
                out.push((t, c));
            }
        }
    }
    out
}

proptest! {
    #[test]
    fn matching_is_one_to_one_and_agrees_with_scan(
        t in prop::collection::vec(any::<bool>(), 2..60),
        e in prop::collection::vec((1i32..99).prop_map(|v| f64::from(v) / 100.0), 60),
        eps in 0.0f64..0.2,
    ) {
        let n = t.len();
        prop_assume!(t.iter().any(|&b| b) && t.iter().any(|&b| !b));
        let scores = e[..n].to_vec();
        let ds = mixed_dataset(n, vec![0; n], vec![0.0; n]);
        let ds = ObservationalDataset::new(
            ds.ids().to_vec(), vec!["x".into()], vec![Column::Numerical(vec![0.0; n])],
            t.clone(), (0..n).map(|i| i as f64).collect(), "T", "Y",
        ).unwrap();
        let pairs = match_units(&UnitMask::full(n), &ds, &scores, eps).unwrap();
        let mut seen = std::collections::HashSet::new();
        for p in &pairs {
            prop_assert!(seen.insert(p.treated_id) && seen.insert(p.control_id));
            prop_assert!(p.score_gap <= eps);
            prop_assert!(t[p.treated_id as usize] && !t[p.control_id as usize]);
        }
        let ids_t: Vec<usize> = (0..n).filter(|&i| t[i]).collect();
        let ids_c: Vec<usize> = (0..n).filter(|&i| !t[i]).collect();
        let got: Vec<(usize, usize)> = pairs.iter().map(|p| (p.treated_id as usize, p.control_id as usize)).collect();
        prop_assert_eq!(got, naive_match(&ids_t, &ids_c, &scores, eps));
        let hist = propensity_histogram(&UnitMask::full(n), &t, &scores, 0.05).unwrap();
        prop_assert_eq!(hist.iter().map(|b| b.t_count).sum::<usize>(), ids_t.len());
        prop_assert_eq!(hist.iter().map(|b| b.c_count).sum::<usize>(), ids_c.len());
    }

    #[test]
    fn display_sample_is_a_seeded_subset(ites in prop::collection::vec(-10.0f64..10.0, 0..300), cap in 1usize..120, seed in any::<u64>()) {
        let pairs: Vec<MatchedPair> = ites.iter().enumerate().map(|(k, &ite)| MatchedPair {
            treated_id: k as u64, control_id: 10_000 + k as u64, ite, score_gap: 0.0,
        }).collect();
        let s = sample_pairs_for_display(&pairs, cap, seed);
        prop_assert_eq!(s.len(), pairs.len().min(cap));
        prop_assert!(s.windows(2).all(|w| w[0].treated_id < w[1].treated_id));
        prop_assert_eq!(&s, &sample_pairs_for_display(&pairs, cap, seed));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn stress_never_increases(coords in prop::collection::vec(-5.0f64..5.0, 8..24), seed in any::<u64>()) {
        let n = coords.len() / 2;
        let mut data = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let (dx, dy) = (coords[2 * i] - coords[2 * j], coords[2 * i + 1] - coords[2 * j + 1]);
                // a non-Euclidean distortion so the fit is not trivially exact
                data.push((dx.abs() + dy.abs()).sqrt() + 0.01);
            }
        }
        let dist = DistanceMatrix::from_condensed(n, data).unwrap();
        let layout = nmds(&dist, &NmdsParams { seed, ..NmdsParams::default() }).unwrap();
        prop_assert!(layout.stress_history.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(layout.coords.iter().all(|c| c.is_finite()));
        prop_assert!((0.0..=1.0).contains(&layout.final_stress));
    }
}
