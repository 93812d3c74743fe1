mod common;

use common::dataset;
use cprism_core::mask::UnitMask;
use cprism_core::matching::{ite_distribution, match_report, match_units, MatchParams, MatchedPair};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn duplicated_units_recover_the_constructed_effect_exactly() {
    // each unit appears twice, differing only in treatment and outcome
    let k = 50;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let base: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
    let e: Vec<f64> = (0..k).map(|i| 0.05 + 0.9 * i as f64 / k as f64).collect();
    let treated: Vec<bool> = (0..2 * k).map(|i| i < k).collect();
    let y: Vec<f64> = (0..2 * k).map(|i| base[i % k] + if i < k { 1.75 } else { 0.0 }).collect();
    let scores: Vec<f64> = (0..2 * k).map(|i| e[i % k]).collect();
    let ds = dataset(&[], &[("x", (0..2 * k).map(|i| (i % k) as f64).collect())], treated, y);
    let report = match_report(&UnitMask::full(2 * k), &ds, &scores, &MatchParams::default()).unwrap();
    assert_eq!(report.n_pairs, k);
    assert!(report.pairs.iter().all(|p| p.score_gap == 0.0 && p.control_id == p.treated_id + k as u64));
    assert_eq!(report.mean_ite, Some(1.75));
}

#[test]
fn report_shape_with_scarce_controls() {
    let (nt, nc, reachable) = (722usize, 238usize, 208usize);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut scores: Vec<f64> = (0..nt).map(|_| rng.random_range(0.1..0.3)).collect();
    scores.extend((0..nc).map(|c| if c < reachable { 0.2 } else { 0.9 }));
    let treated: Vec<bool> = (0..nt + nc).map(|i| i < nt).collect();
    let y: Vec<f64> = (0..nt + nc).map(|_| rng.random_range(0.0..1.0)).collect();
    let ds = dataset(&[], &[("x", vec![0.0; nt + nc])], treated, y);
    let report = match_report(&UnitMask::full(nt + nc), &ds, &scores, &MatchParams::default()).unwrap();
    assert_eq!((report.n_treated, report.n_control, report.n_pairs), (722, 238, 208));
    assert!(report.pairs.iter().all(|p| p.score_gap <= 0.1));
    assert_eq!(report.sampled_pairs.len(), 208);
    assert_eq!(report.hist.iter().map(|b| b.t_count).sum::<usize>(), 722);
}

#[test]
fn empty_overlap_reports_no_effect() {
    let scores = vec![0.1, 0.12, 0.9, 0.95];
    let ds = dataset(&[], &[("x", vec![0.0; 4])], vec![true, true, false, false], vec![1.0, 2.0, 3.0, 4.0]);
    let report = match_report(&UnitMask::full(4), &ds, &scores, &MatchParams::default()).unwrap();
    assert_eq!(report.n_pairs, 0);
    assert_eq!(report.mean_ite, None);
    let json = serde_json::to_value(&report).unwrap();
    assert!(json["mean_ite"].is_null() && json["ci95"].is_null());
    assert!(match_units(&UnitMask::full(4), &ds, &scores, 1.0).unwrap().len() == 2);
}

#[test]
fn interval_follows_the_normal_approximation() {
    let pairs: Vec<MatchedPair> = [1.0, 1.0, 0.0, 0.0]
        .iter()
        .enumerate()
        .map(|(k, &ite)| MatchedPair {
            treated_id: k as u64,
            control_id: 10 + k as u64,
            ite,
            score_gap: 0.0,
        })
        .collect();
    let s = ite_distribution(&pairs).unwrap();
    assert_eq!(s.mean_ite, 0.5);
    assert!((s.ci95[0] + 0.066).abs() < 1e-3 && (s.ci95[1] - 1.066).abs() < 1e-3);
}

#[test]
fn interval_narrows_as_pairs_grow() {
    let width = |k: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
        let pairs: Vec<MatchedPair> = (0..k)
            .map(|i| MatchedPair {
                treated_id: i as u64,
                control_id: (k + i) as u64,
                ite: rng.random_range(-1.0..1.0),
                score_gap: 0.0,
            })
            .collect();
        let s = ite_distribution(&pairs).unwrap();
        s.ci95[1] - s.ci95[0]
    };
    let (w1, w4, w16) = (width(100), width(400), width(1600));
    assert!(w4 < w1 && w16 < w4);
    assert!((w1 / w4 - 2.0).abs() < 0.4 && (w4 / w16 - 2.0).abs() < 0.4);
}
