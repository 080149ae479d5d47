mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::{dot, grid_rows, shuffled_ids, unit_matrix};
use dejavu_core::dedup::{caption_dedup, normalize_caption, semantic_dedup, split_disjoint, CorpusIndex};
use dejavu_core::{EmbeddingMatrix, Error};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

/// Greedy reference: sort by ID, keep a record iff no kept record reaches
/// the threshold, report in input order.
fn greedy_oracle(m: &EmbeddingMatrix, threshold: f64) -> Vec<String> {
    let mut order: Vec<usize> = (0..m.len()).collect();
    order.sort_by(|&a, &b| m.ids()[a].cmp(&m.ids()[b]));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.iter().all(|&j| dot(m.row(i), m.row(j)) < threshold) {
            kept.push(i);
        }
    }
    (0..m.len())
        .filter(|i| kept.contains(i))
        .map(|i| m.ids()[i].clone())
        .collect()
}

#[test]
fn three_caption_fixture() {
    let c = CorpusIndex::new(strings(&["r1", "r2", "r3"]), strings(&["A dog.", "a  dog.", "A cat."])).unwrap();
    assert_eq!(caption_dedup(&c), ["r1", "r3"]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn semantic_dedup_matches_greedy_oracle(seed in any::<u64>(), n in 1usize..120, d in 1usize..6, t in -0.5f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = unit_matrix(shuffled_ids("r", n), &grid_rows(&mut rng, n, d), d);
        let kept = semantic_dedup(&m, t).unwrap();
        prop_assert_eq!(&kept, &greedy_oracle(&m, t));

        // Survivors are pairwise below the threshold, and every dropped
        // record is within it of some survivor.
        let pos: BTreeMap<&str, usize> = m.ids().iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let kept_idx: Vec<usize> = kept.iter().map(|id| pos[id.as_str()]).collect();
        for (x, &i) in kept_idx.iter().enumerate() {
            for &j in &kept_idx[x + 1..] {
                prop_assert!(dot(m.row(i), m.row(j)) < t);
            }
        }
        for i in 0..n {
            if !kept_idx.contains(&i) {
                prop_assert!(kept_idx.iter().any(|&j| dot(m.row(i), m.row(j)) >= t));
            }
        }

        // Idempotent on its own output.
        let sub = m.select(&kept_idx);
        prop_assert_eq!(semantic_dedup(&sub, t).unwrap(), kept);
    }

    #[test]
    fn caption_dedup_keeps_smallest_id_per_caption(seed in any::<u64>(), n in 1usize..80) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let variants = ["a dog", "A Dog", " a  dog ", "a cat", "A CAT\t", "tree", "Tree.", "caf\u{e9}", "cafe\u{301}"];
        let ids = shuffled_ids("r", n);
        let caps: Vec<String> = (0..n).map(|_| variants[rng.random_range(0..variants.len())].to_string()).collect();
        let corpus = CorpusIndex::new(ids.clone(), caps.clone()).unwrap();
        let got = caption_dedup(&corpus);

        let mut best: BTreeMap<String, &str> = BTreeMap::new();
        for (id, cap) in ids.iter().zip(&caps) {
            let key = normalize_caption(cap);
            let slot = best.entry(key).or_insert(id);
            if id.as_str() < *slot {
                *slot = id;
            }
        }
        let winners: BTreeSet<&str> = best.values().copied().collect();
        let expected: Vec<String> = ids.iter().filter(|id| winners.contains(id.as_str())).cloned().collect();
        prop_assert_eq!(&got, &expected);

        let pos: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let again = CorpusIndex::new(got.clone(), got.iter().map(|id| caps[pos[id.as_str()]].clone()).collect()).unwrap();
        prop_assert_eq!(caption_dedup(&again), got);
    }
}

#[test]
fn threshold_one_removes_only_exact_duplicates() {
    let rows = vec![vec![1.0, 0.0], vec![2.0, 0.0], vec![1.0, 1e-3], vec![0.0, 1.0]];
    let m = unit_matrix(strings(&["d", "c", "b", "a"]), &rows, 2);
    assert_eq!(semantic_dedup(&m, 1.0).unwrap(), ["c", "b", "a"]);
}

#[test]
fn semantic_dedup_rejects_bad_input() {
    let raw = EmbeddingMatrix::from_rows(strings(&["a"]), &[vec![2.0, 0.0]], 2).unwrap();
    assert!(matches!(semantic_dedup(&raw, 0.9), Err(Error::Contract(_))));
    let unit = raw.normalize().unwrap();
    assert!(semantic_dedup(&unit, 1.5).is_err());
    assert!(semantic_dedup(&unit, -1.0).is_err());
    assert!(semantic_dedup(&unit, f64::NAN).is_err());
}

#[test]
fn split_is_disjoint_sized_and_seeded() {
    let ids = shuffled_ids("r", 500);
    let all: BTreeSet<&String> = ids.iter().collect();
    for seed in 0..100u64 {
        let s = split_disjoint(&ids, [100, 150, 200], seed).unwrap();
        assert_eq!((s.a.len(), s.b.len(), s.public.len()), (100, 150, 200));
        let union: BTreeSet<&String> = s.a.iter().chain(&s.b).chain(&s.public).collect();
        assert_eq!(union.len(), 450, "seed {seed}");
        assert!(union.is_subset(&all));
        assert_eq!(s, split_disjoint(&ids, [100, 150, 200], seed).unwrap());
    }
    // Input order does not matter, only the set of IDs and the seed.
    let mut reversed = ids.clone();
    reversed.reverse();
    assert_eq!(
        split_disjoint(&ids, [10, 10, 10], 4).unwrap(),
        split_disjoint(&reversed, [10, 10, 10], 4).unwrap()
    );
    assert_ne!(
        split_disjoint(&ids, [10, 10, 10], 4).unwrap(),
        split_disjoint(&ids, [10, 10, 10], 5).unwrap()
    );
    assert!(split_disjoint(&ids, [200, 200, 101], 0).is_err());
}

#[test]
fn split_membership_is_roughly_uniform() {
    // Over many seeds each ID lands in A with probability 1/5.
    let ids = shuffled_ids("r", 50);
    let mut hits: BTreeMap<String, usize> = BTreeMap::new();
    let seeds = 2000;
    for seed in 0..seeds {
        for id in split_disjoint(&ids, [10, 10, 10], seed).unwrap().a {
            *hits.entry(id).or_default() += 1;
        }
    }
    let p: f64 = 0.2;
    let sd = (seeds as f64 * p * (1.0 - p)).sqrt();
    for id in &ids {
        let h = *hits.get(id).unwrap_or(&0) as f64;
        assert!((h - seeds as f64 * p).abs() < 4.5 * sd, "{id}: {h}");
    }
}

#[test]
fn corpus_validation() {
    assert!(CorpusIndex::new(strings(&["a"]), strings(&["x", "y"])).is_err());
    assert!(CorpusIndex::new(strings(&["a", "a"]), strings(&["x", "y"])).is_err());
    let c = CorpusIndex::new(strings(&["a", "b"]), strings(&["x", "y"])).unwrap();
    let wrong = EmbeddingMatrix::from_rows(strings(&["b", "a"]), &[vec![1.0], vec![1.0]], 1).unwrap();
    assert!(matches!(c.with_embeddings(wrong), Err(Error::Alignment { .. })));
}
