//! Independent reference implementations shared by the integration tests.
//!
//! Nothing here calls into the library's ranking or scoring code; the
//! oracles recompute everything by enumeration.

#![allow(dead_code)]

use std::collections::BTreeSet;

use dejavu_core::{AnnotationTable, EmbeddingMatrix, NeighborSet};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Sequential `f64` inner product.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0f64;
    for i in 0..a.len() {
        s += f64::from(a[i]) * f64::from(b[i]);
    }
    s
}

/// Exhaustive sort of every public row: similarity descending, ID ascending.
pub fn oracle_top_k(query_id: &str, q: &[f32], public: &EmbeddingMatrix, k: usize) -> NeighborSet {
    let mut all: Vec<(f64, &str)> = public.rows().map(|(id, p)| (dot(q, p), id)).collect();
    all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(b.1)));
    all.truncate(k);
    NeighborSet {
        query_id: query_id.to_string(),
        neighbor_ids: all.iter().map(|x| x.1.to_string()).collect(),
        similarities: all.iter().map(|x| x.0.clamp(-1.0, 1.0)).collect(),
    }
}

/// Raw rows drawn from a small grid of values, so exact and near ties are
/// common. Rows that come out all-zero get a unit first coordinate.
pub fn grid_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f32>> {
    (0..n)
        .map(|_| {
            let mut r: Vec<f32> = (0..d).map(|_| rng.random_range(-3i32..=3) as f32 * 0.5).collect();
            if r.iter().all(|&x| x == 0.0) {
                r[0] = 1.0;
            }
            r
        })
        .collect()
}

pub fn gaussian_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f32>> {
    use rand_distr::{Distribution, StandardNormal};
    (0..n)
        .map(|_| (0..d).map(|_| StandardNormal.sample(rng)).collect())
        .collect()
}

/// IDs whose lexical order differs from their index order.
pub fn shuffled_ids(prefix: &str, n: usize) -> Vec<String> {
    (0..n)
        .map(|i| format!("{prefix}{:05}", (i * 7919 + 13) % 100_003))
        .collect()
}

pub fn matrix(ids: Vec<String>, rows: &[Vec<f32>], d: usize) -> EmbeddingMatrix {
    EmbeddingMatrix::from_rows(ids, rows, d).unwrap()
}

pub fn unit_matrix(ids: Vec<String>, rows: &[Vec<f32>], d: usize) -> EmbeddingMatrix {
    matrix(ids, rows, d).normalize().unwrap()
}

/// Per-record precision, recall and F of the k-NN test under one model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleScore {
    pub precision: f64,
    pub recall: f64,
    pub f: f64,
    pub has_truth: bool,
}

/// Enumerates the test for one record: rank every public image, take the
/// `k` best, union their labels and compare with the ground truth.
pub fn oracle_score(
    query: &[f32],
    public: &EmbeddingMatrix,
    public_labels: &AnnotationTable,
    truth: &BTreeSet<String>,
    k: usize,
) -> OracleScore {
    let nb = oracle_top_k("q", query, public, k);
    let mut recovered = BTreeSet::new();
    for id in &nb.neighbor_ids {
        for l in public_labels.get(id).unwrap() {
            recovered.insert(l.clone());
        }
    }
    let hit = truth.iter().filter(|l| recovered.contains(*l)).count() as f64;
    let precision = if recovered.is_empty() {
        0.0
    } else {
        hit / recovered.len() as f64
    };
    let recall = if truth.is_empty() {
        0.0
    } else {
        hit / truth.len() as f64
    };
    let f = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    OracleScore {
        precision,
        recall,
        f,
        has_truth: !truth.is_empty(),
    }
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

/// PPG, PRG and AUCG from paired oracle scores. AUCG is the mean recall
/// difference over records with ground truth.
pub fn oracle_gaps(a: &[OracleScore], b: &[OracleScore]) -> (f64, f64, f64) {
    let n = a.len() as f64;
    let ppg = a
        .iter()
        .zip(b)
        .map(|(x, y)| sign(x.precision, y.precision))
        .sum::<f64>()
        / n;
    let with: Vec<(f64, f64)> = a
        .iter()
        .zip(b)
        .filter(|(x, _)| x.has_truth)
        .map(|(x, y)| (x.recall, y.recall))
        .collect();
    if with.is_empty() {
        return (ppg, 0.0, 0.0);
    }
    let m = with.len() as f64;
    let prg = with.iter().map(|&(x, y)| sign(x, y)).sum::<f64>() / m;
    let aucg = with.iter().map(|&(x, y)| x - y).sum::<f64>() / m;
    (ppg, prg, aucg)
}

/// `∫₀¹ F_B(t) - F_A(t) dt` by midpoint sums on a uniform grid.
pub fn grid_cdf_area(a: &[f64], b: &[f64], steps: usize) -> f64 {
    let cdf = |xs: &[f64], t: f64| xs.iter().filter(|&&x| x <= t).count() as f64 / xs.len() as f64;
    let h = 1.0 / steps as f64;
    (0..steps)
        .map(|i| {
            let t = (i as f64 + 0.5) * h;
            (cdf(b, t) - cdf(a, t)) * h
        })
        .sum()
}
