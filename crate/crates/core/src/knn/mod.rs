//! Exact top-k cosine retrieval over a public image set.
//!
//! Rankings are defined by [`dot_f64`] similarities with ties broken by
//! ascending public ID. The batched path screens candidates with a cheap
//! low-precision kernel (AVX-512 VNNI int8 where available, a blocked `f32`
//! matrix product otherwise) and re-scores the survivors with [`dot_f64`].
//! Each screen keeps every row within a worst-case error bound of the
//! running k-th best score, so the result is identical to an exhaustive
//! `f64` sort.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding_store::{EmbeddingMatrix, UNIT_NORM_TOL};
use crate::error::{Error, Result};
use crate::vector::{dot_f64, is_unit, norm_f64};

mod int8;

pub const DEFAULT_K: usize = 10;

/// Public rows per matrix-product block.
const PUBLIC_BLOCK: usize = 2048;
/// Upper bound on queries handled by one task.
const QUERY_BLOCK: usize = 1024;
/// Same for the int8 screen.
const INT8_QUERY_BLOCK: usize = 1024;

/// The `k` public images closest to one query, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborSet {
    pub query_id: String,
    pub neighbor_ids: Vec<String>,
    pub similarities: Vec<f64>,
}

impl NeighborSet {
    pub fn len(&self) -> usize {
        self.neighbor_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbor_ids.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.neighbor_ids
            .iter()
            .map(String::as_str)
            .zip(self.similarities.iter().copied())
    }
}

/// Descending similarity, then ascending ID.
fn rank_order(ids: &[String], a: (f64, usize), b: (f64, usize)) -> Ordering {
    b.0.partial_cmp(&a.0)
        .expect("similarities are finite")
        .then_with(|| ids[a.1].cmp(&ids[b.1]))
}

fn check_public(public: &EmbeddingMatrix, k: usize) -> Result<()> {
    if !public.is_normalized() {
        return Err(Error::Contract("public embeddings must be normalized".into()));
    }
    if k == 0 {
        return Err(Error::Argument("k must be positive".into()));
    }
    if k > public.len() {
        return Err(Error::Argument(format!(
            "k = {k} exceeds the {} public images",
            public.len()
        )));
    }
    Ok(())
}

/// Sorts `(similarity, public index)` candidates and keeps the best `k`.
fn finish(query_id: &str, public: &EmbeddingMatrix, mut scored: Vec<(f64, usize)>, k: usize) -> NeighborSet {
    let ids = public.ids();
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, |a, b| rank_order(ids, *a, *b));
        scored.truncate(k);
    }
    scored.sort_unstable_by(|a, b| rank_order(ids, *a, *b));
    NeighborSet {
        query_id: query_id.to_string(),
        neighbor_ids: scored.iter().map(|&(_, i)| ids[i].clone()).collect(),
        // Rounding can push a dot product of unit vectors a hair past 1.
        similarities: scored.iter().map(|&(s, _)| s.clamp(-1.0, 1.0)).collect(),
    }
}

fn top_k_exhaustive(query_id: &str, query: &[f32], public: &EmbeddingMatrix, k: usize) -> NeighborSet {
    let scored = (0..public.len()).map(|i| (dot_f64(query, public.row(i)), i)).collect();
    finish(query_id, public, scored, k)
}

/// The `k` public rows with the largest inner product with `query`.
pub fn top_k(query: &[f32], public: &EmbeddingMatrix, k: usize) -> Result<NeighborSet> {
    top_k_for("query", query, public, k)
}

/// Same as [`top_k`] with the query ID recorded in the result.
pub fn top_k_for(query_id: &str, query: &[f32], public: &EmbeddingMatrix, k: usize) -> Result<NeighborSet> {
    check_public(public, k)?;
    if query.len() != public.dim() {
        return Err(Error::Argument(format!(
            "query has dimension {}, public set {}",
            query.len(),
            public.dim()
        )));
    }
    if !is_unit(query, UNIT_NORM_TOL) {
        return Err(Error::Contract("query must be unit norm".into()));
    }
    Ok(top_k_exhaustive(query_id, query, public, k))
}

/// Cosine distance from `query` to its nearest public image.
pub fn min_distance(query: &[f32], public: &EmbeddingMatrix) -> Result<f64> {
    if public.is_empty() {
        return Err(Error::Argument("public set is empty".into()));
    }
    let best = top_k(query, public, 1)?;
    Ok(1.0 - best.similarities[0])
}

/// Candidate screening kernel used by [`batch_top_k_with`]. Every kernel
/// returns the same neighbors; they differ only in speed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScreenKernel {
    /// Int8 when the CPU supports it and the dimension allows, else `F32`.
    Auto,
    F32,
    /// AVX-512 VNNI; errors on CPUs without it.
    Int8,
}

impl ScreenKernel {
    pub fn is_available(self) -> bool {
        match self {
            ScreenKernel::Auto | ScreenKernel::F32 => true,
            ScreenKernel::Int8 => int8::available(),
        }
    }
}

/// [`top_k`] for every query row, in query order.
pub fn batch_top_k(queries: &EmbeddingMatrix, public: &EmbeddingMatrix, k: usize) -> Result<Vec<NeighborSet>> {
    batch_top_k_with(queries, public, k, ScreenKernel::Auto)
}

/// [`batch_top_k`] with an explicit screening kernel.
pub fn batch_top_k_with(
    queries: &EmbeddingMatrix,
    public: &EmbeddingMatrix,
    k: usize,
    kernel: ScreenKernel,
) -> Result<Vec<NeighborSet>> {
    if queries.is_empty() {
        return Ok(Vec::new());
    }
    check_public(public, k)?;
    if !queries.is_normalized() {
        return Err(Error::Contract("query embeddings must be normalized".into()));
    }
    if queries.dim() != public.dim() {
        return Err(Error::Argument(format!(
            "queries have dimension {}, public set {}",
            queries.dim(),
            public.dim()
        )));
    }
    let d = public.dim();
    if d == 0 {
        return Ok(queries
            .rows()
            .map(|(id, q)| top_k_exhaustive(id, q, public, k))
            .collect());
    }

    let use_int8 = match kernel {
        ScreenKernel::F32 => false,
        ScreenKernel::Auto => int8::available() && d <= int8::MAX_DIM,
        ScreenKernel::Int8 => {
            if !int8::available() {
                return Err(Error::Argument(
                    "this CPU lacks AVX-512 VNNI for the int8 kernel".into(),
                ));
            }
            if d > int8::MAX_DIM {
                return Err(Error::Argument(format!(
                    "int8 kernel supports dimensions up to {}, got {d}",
                    int8::MAX_DIM
                )));
            }
            true
        }
    };

    let n_query = queries.len();
    let threads = rayon::current_num_threads().max(1);
    let cap = if use_int8 { INT8_QUERY_BLOCK } else { QUERY_BLOCK };
    let block = n_query.div_ceil(threads).clamp(1, cap);
    let starts: Vec<usize> = (0..n_query).step_by(block).collect();
    let rescore = |start: usize, candidates: Vec<Vec<u32>>| -> Vec<NeighborSet> {
        candidates
            .into_iter()
            .enumerate()
            .map(|(i, cands)| {
                let q = queries.row(start + i);
                let scored = cands
                    .iter()
                    .map(|&j| (dot_f64(q, public.row(j as usize)), j as usize))
                    .collect();
                finish(&queries.ids()[start + i], public, scored, k)
            })
            .collect()
    };
    let nested: Vec<Vec<NeighborSet>> = if use_int8 {
        let screen = int8::Int8Screen::new(public);
        starts
            .par_iter()
            .map(|&start| rescore(start, screen.run(queries, start..(start + block).min(n_query), k)))
            .collect()
    } else {
        let screen = Screen::new(public);
        starts
            .par_iter()
            .map(|&start| rescore(start, screen.run(queries, start..(start + block).min(n_query), k)))
            .collect()
    };
    Ok(nested.into_iter().flatten().collect())
}

/// Blocked `f32` candidate screening over one public matrix.
struct Screen<'a> {
    public: &'a EmbeddingMatrix,
    max_norm: f64,
}

/// Per-query candidate pool. Every public row whose `f32` score is within
/// `margin` of the current k-th best score is retained.
struct Pool {
    threshold: f32,
    items: Vec<(f32, u32)>,
}

impl Pool {
    fn prune(&mut self, k: usize, margin: f32) {
        if self.items.len() < k {
            return;
        }
        let kth = {
            let (_, kth, _) = self.items.select_nth_unstable_by(k - 1, |a, b| b.0.total_cmp(&a.0));
            kth.0
        };
        self.threshold = self.threshold.max(kth);
        let floor = self.threshold - margin;
        self.items.retain(|c| c.0 >= floor);
    }
}

impl<'a> Screen<'a> {
    fn new(public: &'a EmbeddingMatrix) -> Self {
        let max_norm = public.rows().map(|(_, r)| norm_f64(r)).fold(0.0, f64::max);
        Screen { public, max_norm }
    }

    fn run(&self, queries: &EmbeddingMatrix, range: std::ops::Range<usize>, k: usize) -> Vec<Vec<u32>> {
        let public = self.public;
        let d = public.dim();
        let nq = range.len();
        let q_data = &queries.data()[range.start * d..range.end * d];

        // |f32 dot - exact dot| <= (d + 1) u |q| |p| for unit roundoff u;
        // screening keeps everything within twice that (doubled again) of
        // the running k-th best score.
        let unit_roundoff = f64::from(f32::EPSILON) / 2.0;
        let margins: Vec<f32> = (0..nq)
            .map(|i| {
                let qn = norm_f64(queries.row(range.start + i));
                (4.0 * (d as f64 + 1.0) * unit_roundoff * qn * self.max_norm) as f32
            })
            .collect();

        let mut pools: Vec<Pool> = (0..nq)
            .map(|_| Pool {
                threshold: f32::NEG_INFINITY,
                items: Vec::new(),
            })
            .collect();
        let prune_at = (4 * k).max(256);
        let mut scores = vec![0.0f32; nq * PUBLIC_BLOCK.min(public.len())];

        for p_start in (0..public.len()).step_by(PUBLIC_BLOCK) {
            let p_end = (p_start + PUBLIC_BLOCK).min(public.len());
            let np = p_end - p_start;
            let p_data = &public.data()[p_start * d..p_end * d];
            // scores (nq x np) = Q (nq x d) * P^T, P stored row-major np x d.
            unsafe {
                matrixmultiply::sgemm(
                    nq,
                    d,
                    np,
                    1.0,
                    q_data.as_ptr(),
                    d as isize,
                    1,
                    p_data.as_ptr(),
                    1,
                    d as isize,
                    0.0,
                    scores.as_mut_ptr(),
                    np as isize,
                    1,
                );
            }
            for (qi, pool) in pools.iter_mut().enumerate() {
                let row = &scores[qi * np..(qi + 1) * np];
                let floor = pool.threshold - margins[qi];
                collect_above(row, floor, p_start as u32, &mut pool.items);
                if pool.items.len() > prune_at {
                    pool.prune(k, margins[qi]);
                }
            }
        }

        pools
            .into_iter()
            .enumerate()
            .map(|(qi, mut pool)| {
                pool.prune(k, margins[qi]);
                pool.items.into_iter().map(|c| c.1).collect()
            })
            .collect()
    }
}

/// Appends `(score, offset + j)` for every `row[j] >= floor`.
#[inline]
fn collect_above(row: &[f32], floor: f32, offset: u32, out: &mut Vec<(f32, u32)>) {
    const LANES: usize = 16;
    let mut chunks = row.chunks_exact(LANES);
    let mut base = 0usize;
    for chunk in &mut chunks {
        let hit = chunk.iter().fold(false, |acc, &s| acc | (s >= floor));
        if hit {
            for (j, &s) in chunk.iter().enumerate() {
                if s >= floor {
                    out.push((s, offset + (base + j) as u32));
                }
            }
        }
        base += LANES;
    }
    for (j, &s) in chunks.remainder().iter().enumerate() {
        if s >= floor {
            out.push((s, offset + (base + j) as u32));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(ids: &[&str], rows: &[Vec<f32>]) -> EmbeddingMatrix {
        let d = rows.first().map_or(0, Vec::len);
        EmbeddingMatrix::from_rows(ids.to_vec(), rows, d)
            .unwrap()
            .normalize()
            .unwrap()
    }

    #[test]
    fn single_candidate() {
        let p = unit(&["p1"], &[vec![0.2, 0.9]]);
        let n = top_k(&[1.0, 0.0], &p, 1).unwrap();
        assert_eq!(n.neighbor_ids, ["p1"]);
    }

    #[test]
    fn hand_computed_four_vectors() {
        let p = unit(
            &["a", "b", "c", "d"],
            &[vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0], vec![0.6, 0.8]],
        );
        let n = top_k(&[1.0, 0.0], &p, 2).unwrap();
        assert_eq!(n.neighbor_ids, ["a", "d"]);
        assert_eq!(n.similarities[0], 1.0);
        assert!((n.similarities[1] - 0.6).abs() < 1e-7);
    }

    #[test]
    fn ties_break_by_ascending_id() {
        let p = unit(&["z", "m", "b"], &[vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0]]);
        let n = top_k(&[1.0, 0.0], &p, 2).unwrap();
        assert_eq!(n.neighbor_ids, ["b", "m"]);
        let q = unit(&["q"], &[vec![1.0, 0.0]]);
        assert_eq!(batch_top_k(&q, &p, 2).unwrap()[0].neighbor_ids, ["b", "m"]);
    }

    #[test]
    fn argument_and_contract_errors() {
        let p = unit(&["a"], &[vec![1.0, 0.0]]);
        assert!(matches!(top_k(&[1.0, 0.0], &p, 2), Err(Error::Argument(_))));
        assert!(matches!(top_k(&[1.0, 0.0], &p, 0), Err(Error::Argument(_))));
        assert!(matches!(top_k(&[2.0, 0.0], &p, 1), Err(Error::Contract(_))));
        let raw = EmbeddingMatrix::from_rows(vec!["a"], &[vec![1.0, 0.0]], 2).unwrap();
        assert!(matches!(top_k(&[1.0, 0.0], &raw, 1), Err(Error::Contract(_))));
        assert!(matches!(batch_top_k(&raw, &p, 1), Err(Error::Contract(_))));
    }

    #[test]
    fn min_distance_cases() {
        let p = unit(&["a", "b"], &[vec![0.0, 1.0], vec![-1.0, 0.0]]);
        assert_eq!(min_distance(&[1.0, 0.0], &p).unwrap(), 1.0);
        assert_eq!(min_distance(&[0.0, 1.0], &p).unwrap(), 0.0);
        let empty = EmbeddingMatrix::from_unit_rows(vec![], vec![], 2).unwrap();
        assert!(matches!(min_distance(&[1.0, 0.0], &empty), Err(Error::Argument(_))));
    }

    #[test]
    fn empty_batch() {
        let p = unit(&["a"], &[vec![1.0]]);
        let q = EmbeddingMatrix::from_unit_rows(vec![], vec![], 1).unwrap();
        assert!(batch_top_k(&q, &p, 1).unwrap().is_empty());
    }

    #[test]
    fn collect_above_handles_remainder() {
        let row: Vec<f32> = (0..37).map(|i| i as f32).collect();
        let mut out = Vec::new();
        collect_above(&row, 30.0, 100, &mut out);
        let idx: Vec<u32> = out.iter().map(|c| c.1).collect();
        assert_eq!(idx, (130..137).collect::<Vec<_>>());
    }
}
