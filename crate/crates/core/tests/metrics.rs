mod common;

use std::collections::BTreeSet;

use common::grid_cdf_area;
use dejavu_core::metrics::{
    auc_gap, bootstrap, gap_curve, population_gaps, rank_records, recovered_objects, sample_metrics, top_m_objects,
    BootstrapEstimate,
};
use dejavu_core::{AnnotationTable, GapMetric, NeighborSet, ObjectLabelSet, SampleMetrics, SortKey};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn labels(xs: &[&str]) -> ObjectLabelSet {
    xs.iter().map(|s| s.to_string()).collect()
}

/// Random paired tables; recalls are multiples of `1/n_truth` with
/// `n_truth <= 8`, and some records carry no ground truth.
fn random_pair(rng: &mut ChaCha8Rng, n: usize) -> (Vec<SampleMetrics>, Vec<SampleMetrics>) {
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for i in 0..n {
        let n_truth = if rng.random_bool(0.1) {
            0
        } else {
            rng.random_range(1..=8usize)
        };
        let make = |rng: &mut ChaCha8Rng| {
            let n_correct = if n_truth == 0 { 0 } else { rng.random_range(0..=n_truth) };
            let n_recovered = n_correct + rng.random_range(0..4usize);
            let precision = if n_recovered == 0 {
                0.0
            } else {
                n_correct as f64 / n_recovered as f64
            };
            let recall = if n_truth == 0 {
                0.0
            } else {
                n_correct as f64 / n_truth as f64
            };
            let f_score = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            SampleMetrics {
                record_id: format!("r{:04}", (i * 37) % 1009),
                precision,
                recall,
                f_score,
                n_correct,
                n_truth,
                n_recovered,
                min_dist: rng.random_range(0..20u32) as f64 / 20.0,
            }
        };
        a.push(make(rng));
        b.push(make(rng));
    }
    (a, b)
}

fn truth_recalls(a: &[SampleMetrics], b: &[SampleMetrics]) -> (Vec<f64>, Vec<f64>) {
    a.iter()
        .zip(b)
        .filter(|(x, _)| x.n_truth > 0)
        .map(|(x, y)| (x.recall, y.recall))
        .unzip()
}

fn sign(x: f64, y: f64) -> f64 {
    if x > y {
        1.0
    } else if x < y {
        -1.0
    } else {
        0.0
    }
}

#[test]
fn sample_scores_on_small_sets() {
    let m = sample_metrics(&labels(&["cat", "dog", "tree"]), &labels(&["cat", "car"]));
    assert_eq!((m.n_correct, m.n_truth, m.n_recovered), (1, 3, 2));
    assert_eq!(m.precision, 0.5);
    assert_eq!(m.recall, 1.0 / 3.0);
    assert!((m.f_score - 0.4).abs() < 1e-15);

    let empty_pred = sample_metrics(&labels(&["cat"]), &labels(&[]));
    assert_eq!(
        (empty_pred.precision, empty_pred.recall, empty_pred.f_score),
        (0.0, 0.0, 0.0)
    );
    let empty_truth = sample_metrics(&labels(&[]), &labels(&["cat"]));
    assert!(!empty_truth.has_truth());
    assert_eq!(empty_truth.precision, 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn auc_gap_matches_grid_integration_and_mean_difference(seed in any::<u64>(), n in 1usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = random_pair(&mut rng, n);
        let (ra, rb) = truth_recalls(&a, &b);
        prop_assume!(!ra.is_empty());
        let got = auc_gap(&ra, &rb).unwrap();
        // Every breakpoint is a multiple of 1/840, so a grid of 8400 cells
        // integrates the step functions exactly.
        prop_assert!((got - grid_cdf_area(&ra, &rb, 8400)).abs() < 1e-9);
        let mean_diff = ra.iter().zip(&rb).map(|(x, y)| x - y).sum::<f64>() / ra.len() as f64;
        prop_assert!((got - mean_diff).abs() < 1e-12);
        prop_assert!((GapMetric::Aucg.compute(&a, &b).unwrap() - mean_diff).abs() < 1e-12);
    }

    #[test]
    fn population_gaps_match_sign_counts(seed in any::<u64>(), n in 1usize..80) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = random_pair(&mut rng, n);
        let ppg = a.iter().zip(&b).map(|(x, y)| sign(x.precision, y.precision)).sum::<f64>() / n as f64;
        let (ra, rb) = truth_recalls(&a, &b);
        let prg = if ra.is_empty() {
            0.0
        } else {
            ra.iter().zip(&rb).map(|(x, y)| sign(*x, *y)).sum::<f64>() / ra.len() as f64
        };
        let (got_ppg, got_prg) = population_gaps(&a, &b).unwrap();
        prop_assert!((got_ppg - ppg).abs() < 1e-15);
        prop_assert!((got_prg - prg).abs() < 1e-15);
    }

    #[test]
    fn swapping_models_negates_every_gap(seed in any::<u64>(), n in 1usize..80) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = random_pair(&mut rng, n);
        for m in GapMetric::ALL {
            let fwd = m.compute(&a, &b).unwrap();
            let back = m.compute(&b, &a).unwrap();
            prop_assert!((fwd + back).abs() < 1e-12, "{:?}: {} vs {}", m, fwd, back);
        }
    }
}

#[test]
fn auc_gap_signs_and_errors() {
    assert_eq!(auc_gap(&[1.0, 1.0], &[0.0, 0.0]).unwrap(), 1.0);
    assert_eq!(auc_gap(&[0.0], &[0.5]).unwrap(), -0.5);
    assert!(auc_gap(&[], &[]).is_err());
    assert!(auc_gap(&[0.5], &[0.5, 0.5]).is_err());
    assert!(auc_gap(&[1.5], &[0.5]).is_err());
    assert!(auc_gap(&[f64::NAN], &[0.5]).is_err());
}

#[test]
fn identical_models_give_exactly_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (a, _) = random_pair(&mut rng, 300);
    for m in GapMetric::ALL {
        assert_eq!(m.compute(&a, &a).unwrap(), 0.0);
        let est = bootstrap(&a, &a, m, 0.1, 200, 3).unwrap();
        assert_eq!(est, BootstrapEstimate { mean: 0.0, std: 0.0 });
    }
}

#[test]
fn bootstrap_std_matches_sampling_theory() {
    // Each replicate averages m i.i.d. draws of a per-record quantity, so
    // its spread is the population std of that quantity over sqrt(m).
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (a, b) = random_pair(&mut rng, 400);
    let (fraction, reps) = (0.05, 100_000);
    let check = |metric: GapMetric, per_record: Vec<f64>| {
        let n = per_record.len();
        let m = (fraction * n as f64).ceil();
        let mean = per_record.iter().sum::<f64>() / n as f64;
        let var = per_record.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
        let expected_std = (var / m).sqrt();
        let est = bootstrap(&a, &b, metric, fraction, reps, 17).unwrap();
        assert!(
            (est.std / expected_std - 1.0).abs() < 0.02,
            "{metric:?}: {} vs {expected_std}",
            est.std
        );
        assert!(
            (est.mean - mean).abs() < 4.0 * expected_std / (reps as f64).sqrt(),
            "{metric:?}: mean {}",
            est.mean
        );
    };
    check(
        GapMetric::Ppg,
        a.iter().zip(&b).map(|(x, y)| sign(x.precision, y.precision)).collect(),
    );
    let (ra, rb) = truth_recalls(&a, &b);
    check(GapMetric::Prg, ra.iter().zip(&rb).map(|(x, y)| sign(*x, *y)).collect());
    check(GapMetric::Aucg, ra.iter().zip(&rb).map(|(x, y)| x - y).collect());
}

#[test]
fn bootstrap_is_seeded_and_validated() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (a, b) = random_pair(&mut rng, 100);
    let x = bootstrap(&a, &b, GapMetric::Aucg, 0.1, 50, 9).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    assert_eq!(
        x,
        pool.install(|| bootstrap(&a, &b, GapMetric::Aucg, 0.1, 50, 9).unwrap())
    );
    assert_ne!(x, bootstrap(&a, &b, GapMetric::Aucg, 0.1, 50, 10).unwrap());
    assert!(bootstrap(&a, &b, GapMetric::Aucg, 0.0, 50, 9).is_err());
    assert!(bootstrap(&a, &b, GapMetric::Aucg, 1.5, 50, 9).is_err());
    assert!(bootstrap(&a, &b, GapMetric::Aucg, 0.1, 0, 9).is_err());
    assert!(bootstrap(&a, &b[1..], GapMetric::Aucg, 0.1, 5, 9).is_err());
}

#[test]
fn bootstrap_estimate_uses_population_std() {
    let e = BootstrapEstimate::from_samples(&[1.0, 3.0]);
    assert_eq!((e.mean, e.std), (2.0, 1.0));
}

fn annotations(entries: &[(&str, &[&str])]) -> AnnotationTable {
    let mut t = AnnotationTable::new();
    for (id, objs) in entries {
        t.insert(*id, objs.iter().copied()).unwrap();
    }
    t
}

#[test]
fn union_rule_collects_every_neighbor_label() {
    let table = annotations(&[("p1", &["cat", "dog"]), ("p2", &["dog", "car"]), ("p3", &["tree"])]);
    let nb = NeighborSet {
        query_id: "q".into(),
        neighbor_ids: vec!["p2".into(), "p1".into()],
        similarities: vec![0.9, 0.8],
    };
    assert_eq!(recovered_objects(&nb, &table).unwrap(), labels(&["car", "cat", "dog"]));
    let missing = NeighborSet {
        neighbor_ids: vec!["p9".into()],
        similarities: vec![0.1],
        ..nb
    };
    assert!(recovered_objects(&missing, &table).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn top_m_matches_vote_enumeration(seed in any::<u64>(), k in 1usize..12, m in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vocab = ["a", "b", "c", "d", "e", "f", "g", "h", "i"];
        let mut table = AnnotationTable::new();
        let mut nb = NeighborSet { query_id: "q".into(), neighbor_ids: vec![], similarities: vec![] };
        for j in 0..k {
            let id = format!("p{j}");
            let objs: Vec<&str> = vocab.iter().copied().filter(|_| rng.random_bool(0.3)).collect();
            table.insert(id.clone(), objs).unwrap();
            nb.neighbor_ids.push(id);
            // Similarities on a coarse grid so vote ties happen.
            nb.similarities.push(1.0 - 0.25 * j as f64 / 2.0f64.max(k as f64));
        }
        // Oracle: vote of every label, then pick the best label m times.
        let mut votes: Vec<(String, f64)> = vocab
            .iter()
            .map(|l| {
                let v: f64 = nb.neighbor_ids.iter().zip(&nb.similarities)
                    .filter(|(id, _)| table.get(id).unwrap().contains(*l))
                    .map(|(_, s)| s)
                    .sum();
                (l.to_string(), v)
            })
            .filter(|(l, _)| nb.neighbor_ids.iter().any(|id| table.get(id).unwrap().contains(l)))
            .collect();
        let mut expected = BTreeSet::new();
        for _ in 0..m {
            if votes.is_empty() {
                break;
            }
            let mut best = 0;
            for i in 1..votes.len() {
                let (l, v) = &votes[i];
                let (bl, bv) = &votes[best];
                if v > bv || (v == bv && l < bl) {
                    best = i;
                }
            }
            expected.insert(votes.remove(best).0);
        }
        prop_assert_eq!(top_m_objects(&nb, &table, m).unwrap(), expected);
    }
}

#[test]
fn top_m_breaks_vote_ties_by_label() {
    let table = annotations(&[("p1", &["zebra", "apple"]), ("p2", &["mango"])]);
    let nb = NeighborSet {
        query_id: "q".into(),
        neighbor_ids: vec!["p1".into(), "p2".into()],
        similarities: vec![0.5, 0.5],
    };
    assert_eq!(top_m_objects(&nb, &table, 2).unwrap(), labels(&["apple", "mango"]));
    assert!(top_m_objects(&nb, &table, 0).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ranking_and_curve_match_selection_oracle(seed in any::<u64>(), n in 2usize..120) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = random_pair(&mut rng, n);
        for key in [SortKey::MinDist, SortKey::CorrectPreds] {
            // Selection sort with an explicit "more vulnerable" predicate.
            let before = |i: usize, j: usize| -> bool {
                let (x, y) = (&a[i], &a[j]);
                let (px, py) = match key {
                    SortKey::MinDist => (x.min_dist, y.min_dist),
                    SortKey::CorrectPreds => (-(x.n_correct as f64), -(y.n_correct as f64)),
                };
                px < py || (px == py && x.record_id < y.record_id)
            };
            let mut left: Vec<usize> = (0..n).collect();
            let mut expected = Vec::new();
            while !left.is_empty() {
                let mut best = 0;
                for c in 1..left.len() {
                    if before(left[c], left[best]) {
                        best = c;
                    }
                }
                expected.push(left.remove(best));
            }
            let order = rank_records(&a, key);
            prop_assert_eq!(&order, &expected);

            let grid: Vec<usize> = [1, n / 3, n / 2, n].into_iter().filter(|&l| l > 0).collect::<BTreeSet<_>>().into_iter().collect();
            let curve = gap_curve(&order, &a, &b, &grid, key).unwrap();
            prop_assert_eq!(curve.points.len(), grid.len());
            for p in &curve.points {
                let top = &expected[..p.l];
                let mean = |f: &dyn Fn(&SampleMetrics) -> f64| top.iter().map(|&i| f(&a[i]) - f(&b[i])).sum::<f64>() / p.l as f64;
                prop_assert!((p.precision_gap - mean(&|s| s.precision)).abs() < 1e-12);
                prop_assert!((p.recall_gap - mean(&|s| s.recall)).abs() < 1e-12);
                prop_assert!((p.f_score_gap - mean(&|s| s.f_score)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn gap_curve_rejects_bad_grids() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (a, b) = random_pair(&mut rng, 10);
    let order = rank_records(&a, SortKey::MinDist);
    assert!(gap_curve(&order, &a, &b, &[0], SortKey::MinDist).is_err());
    assert!(gap_curve(&order, &a, &b, &[11], SortKey::MinDist).is_err());
    assert!(gap_curve(&order, &a, &b, &[5, 5], SortKey::MinDist).is_err());
    assert!(gap_curve(&order[1..], &a, &b, &[5], SortKey::MinDist).is_err());
}
