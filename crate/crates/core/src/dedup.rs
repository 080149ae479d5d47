//! Corpus hygiene: caption dedup, greedy semantic dedup, disjoint splits.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use unicode_normalization::UnicodeNormalization;

use crate::embedding_store::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::vector::dot_f64;

/// Record IDs with their captions and, optionally, embeddings.
#[derive(Debug, Clone, Default)]
pub struct CorpusIndex {
    ids: Vec<String>,
    captions: Vec<String>,
    embeddings: Option<EmbeddingMatrix>,
}

impl CorpusIndex {
    pub fn new(ids: Vec<String>, captions: Vec<String>) -> Result<Self> {
        if ids.len() != captions.len() {
            return Err(Error::Argument(format!(
                "{} ids but {} captions",
                ids.len(),
                captions.len()
            )));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::Validation(format!("duplicate corpus id {dup}")));
        }
        Ok(CorpusIndex {
            ids,
            captions,
            embeddings: None,
        })
    }

    /// Attaches embeddings; their IDs must match the corpus IDs in order.
    pub fn with_embeddings(mut self, m: EmbeddingMatrix) -> Result<Self> {
        if m.ids() != self.ids.as_slice() {
            return Err(Error::Alignment {
                msg: "embedding ids do not match corpus ids".into(),
                ids: m
                    .ids()
                    .iter()
                    .zip(&self.ids)
                    .filter(|(a, b)| a != b)
                    .map(|(a, _)| a.clone())
                    .take(20)
                    .collect(),
            });
        }
        self.embeddings = Some(m);
        Ok(self)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn captions(&self) -> &[String] {
        &self.captions
    }

    pub fn embeddings(&self) -> Option<&EmbeddingMatrix> {
        self.embeddings.as_ref()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// NFC, case fold, and collapse every whitespace run to one space.
pub fn normalize_caption(caption: &str) -> String {
    let folded: String = caption.nfc().collect::<String>().to_lowercase();
    folded.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Keeps one record per normalized caption: the one with the smallest ID.
/// Output follows input order.
pub fn caption_dedup(corpus: &CorpusIndex) -> Vec<String> {
    let mut winner: HashMap<String, usize> = HashMap::new();
    for (i, caption) in corpus.captions.iter().enumerate() {
        winner
            .entry(normalize_caption(caption))
            .and_modify(|w| {
                if corpus.ids[i] < corpus.ids[*w] {
                    *w = i;
                }
            })
            .or_insert(i);
    }
    let keep: HashSet<usize> = winner.into_values().collect();
    (0..corpus.len())
        .filter(|i| keep.contains(i))
        .map(|i| corpus.ids[i].clone())
        .collect()
}

/// Greedy near-duplicate removal.
///
/// Records are visited in ascending ID order; one is kept iff its cosine
/// similarity to every previously kept record is below `threshold`. Output
/// follows input order.
pub fn semantic_dedup(embeddings: &EmbeddingMatrix, threshold: f64) -> Result<Vec<String>> {
    if !embeddings.is_normalized() {
        return Err(Error::Contract("semantic dedup needs normalized embeddings".into()));
    }
    if !(threshold > -1.0 && threshold <= 1.0) {
        return Err(Error::Argument(format!("threshold {threshold} outside (-1, 1]")));
    }
    let ids = embeddings.ids();
    let mut visit: Vec<usize> = (0..ids.len()).collect();
    visit.sort_by(|&a, &b| ids[a].cmp(&ids[b]));

    let mut kept: Vec<usize> = Vec::new();
    for i in visit {
        let row = embeddings.row(i);
        let duplicate = kept.par_iter().any(|&j| dot_f64(row, embeddings.row(j)) >= threshold);
        if !duplicate {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    Ok(kept.into_iter().map(|i| ids[i].clone()).collect())
}

/// Three pairwise-disjoint samples of the requested sizes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DisjointSplit {
    pub a: Vec<String>,
    pub b: Vec<String>,
    pub public: Vec<String>,
}

/// Seeded uniform shuffle of `ids` cut into `[n_a, n_b, n_public]`.
pub fn split_disjoint(ids: &[String], sizes: [usize; 3], seed: u64) -> Result<DisjointSplit> {
    let need: usize = sizes.iter().sum();
    if need > ids.len() {
        return Err(Error::Argument(format!(
            "split needs {need} records but only {} are available",
            ids.len()
        )));
    }
    let mut order = ids.to_vec();
    order.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut it = order.into_iter();
    let mut take = |n: usize| it.by_ref().take(n).collect::<Vec<_>>();
    Ok(DisjointSplit {
        a: take(sizes[0]),
        b: take(sizes[1]),
        public: take(sizes[2]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn smallest_id_wins() {
        let c = CorpusIndex::new(strings(&["r2", "r1", "r3"]), strings(&["a dog", "a dog", "a cat"])).unwrap();
        assert_eq!(caption_dedup(&c), ["r1", "r3"]);
    }

    #[test]
    fn distinct_captions_untouched() {
        let c = CorpusIndex::new(strings(&["b", "a"]), strings(&["x", "y"])).unwrap();
        assert_eq!(caption_dedup(&c), ["b", "a"]);
    }

    #[test]
    fn case_and_whitespace_collapse() {
        let c = CorpusIndex::new(strings(&["1", "2", "3"]), strings(&["A  Dog\t", "a dog", " a DOG"])).unwrap();
        assert_eq!(caption_dedup(&c), ["1"]);
    }

    #[test]
    fn nfc_equivalent_captions_collapse() {
        let composed = "caf\u{e9}";
        let decomposed = "cafe\u{301}";
        let c = CorpusIndex::new(strings(&["1", "2"]), vec![composed.into(), decomposed.into()]).unwrap();
        assert_eq!(caption_dedup(&c), ["1"]);
    }

    #[test]
    fn corpus_rejects_duplicate_ids() {
        assert!(CorpusIndex::new(strings(&["a", "a"]), strings(&["x", "y"])).is_err());
    }

    fn unit(ids: &[&str], rows: &[Vec<f32>]) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(ids.to_vec(), rows, rows[0].len())
            .unwrap()
            .normalize()
            .unwrap()
    }

    #[test]
    fn identical_vectors_drop_the_later_id() {
        let m = unit(&["b", "a"], &[vec![1.0, 2.0], vec![1.0, 2.0]]);
        assert_eq!(semantic_dedup(&m, 0.99).unwrap(), ["a"]);
    }

    #[test]
    fn threshold_one_keeps_distinct_vectors() {
        let m = unit(&["a", "b", "c"], &[vec![1.0, 0.0], vec![0.999, 0.01], vec![0.0, 1.0]]);
        assert_eq!(semantic_dedup(&m, 1.0).unwrap().len(), 3);
    }

    #[test]
    fn semantic_dedup_contracts() {
        let raw = EmbeddingMatrix::from_rows(vec!["a"], &[vec![2.0, 0.0]], 2).unwrap();
        assert!(matches!(semantic_dedup(&raw, 0.9), Err(Error::Contract(_))));
        let m = unit(&["a"], &[vec![1.0, 0.0]]);
        assert!(semantic_dedup(&m, -1.0).is_err());
        assert!(semantic_dedup(&m, 1.01).is_err());
    }

    #[test]
    fn split_is_exact_partition() {
        let ids: Vec<String> = (0..10).map(|i| format!("r{i}")).collect();
        let s = split_disjoint(&ids, [3, 3, 4], 1).unwrap();
        let mut all: Vec<String> = s.a.iter().chain(&s.b).chain(&s.public).cloned().collect();
        all.sort();
        assert_eq!(all, ids);
        assert_eq!(s, split_disjoint(&ids, [3, 3, 4], 1).unwrap());
        assert_ne!(s, split_disjoint(&ids, [3, 3, 4], 2).unwrap());
        assert!(matches!(split_disjoint(&ids, [5, 5, 1], 1), Err(Error::Argument(_))));
    }
}
