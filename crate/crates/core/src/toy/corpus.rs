//! Synthetic object-scene corpus.
//!
//! Every object label owns a random unit prototype. A scene is a Zipf-weighted
//! sample of distinct objects; its image vector is the normalized sum of
//! their prototypes plus Gaussian noise, and its caption names only a random
//! subset of the objects.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding_store::{AnnotationTable, EmbeddingMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticCorpusConfig {
    /// Number of distinct object labels.
    pub vocab_size: usize,
    /// Inclusive range of objects per scene.
    pub objects_per_scene: [usize; 2],
    /// Fraction of a scene's objects named by its caption.
    pub caption_coverage: f64,
    /// Dimension of the raw image vectors.
    pub latent_dim: usize,
    pub noise_std: f64,
    /// Object frequency skew; 0 is uniform.
    pub zipf_exponent: f64,
    pub n_records: usize,
    pub seed: u64,
}

impl Default for SyntheticCorpusConfig {
    fn default() -> Self {
        SyntheticCorpusConfig {
            vocab_size: 200,
            objects_per_scene: [3, 8],
            caption_coverage: 0.5,
            latent_dim: 16,
            noise_std: 0.05,
            zipf_exponent: 1.0,
            n_records: 12_000,
            seed: 0,
        }
    }
}

impl SyntheticCorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.objects_per_scene;
        if lo < 1 || lo > hi {
            return Err(Error::Argument(format!(
                "objects per scene [{lo}, {hi}] must satisfy 1 <= min <= max"
            )));
        }
        if self.vocab_size < hi {
            return Err(Error::Argument(format!(
                "vocabulary of {} labels cannot fill scenes of {hi} distinct objects",
                self.vocab_size
            )));
        }
        if !(self.caption_coverage > 0.0 && self.caption_coverage <= 1.0) {
            return Err(Error::Argument(format!(
                "caption coverage {} outside (0, 1]",
                self.caption_coverage
            )));
        }
        let non_negative = |x: f64| x.is_finite() && x >= 0.0;
        if !non_negative(self.noise_std) || !non_negative(self.zipf_exponent) {
            return Err(Error::Argument("noise std and zipf exponent must be >= 0".into()));
        }
        if self.latent_dim == 0 {
            return Err(Error::Argument("latent dimension must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRecord {
    pub id: String,
    /// Ground-truth object indices, ascending.
    pub objects: Vec<usize>,
    pub image: Vec<f32>,
    /// Caption token indices, ascending; always a subset of `objects`.
    pub caption: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub config: SyntheticCorpusConfig,
    pub labels: Vec<String>,
    pub prototypes: Vec<Vec<f64>>,
    pub records: Vec<SyntheticRecord>,
}

pub fn label_name(index: usize) -> String {
    format!("obj{index:04}")
}

pub fn record_id(index: usize) -> String {
    format!("r{index:08}")
}

impl SyntheticCorpus {
    pub fn caption_text(&self, r: &SyntheticRecord) -> String {
        r.caption
            .iter()
            .map(|&t| self.labels[t].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn annotations<'a>(&self, records: impl IntoIterator<Item = &'a SyntheticRecord>) -> AnnotationTable {
        let mut t = AnnotationTable::new();
        for r in records {
            t.insert(r.id.clone(), r.objects.iter().map(|&o| self.labels[o].as_str()))
                .expect("record ids are unique");
        }
        t
    }

    /// Raw (un-normalized) image vectors of `records`.
    pub fn image_matrix<'a>(&self, records: impl IntoIterator<Item = &'a SyntheticRecord>) -> EmbeddingMatrix {
        let (ids, data): (Vec<String>, Vec<Vec<f32>>) =
            records.into_iter().map(|r| (r.id.clone(), r.image.clone())).unzip();
        EmbeddingMatrix::new(ids, data.concat(), self.config.latent_dim).expect("generated images are finite")
    }
}

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// `count` distinct indices drawn by successive weighted sampling without
/// replacement (Efraimidis–Spirakis keys).
fn weighted_distinct(rng: &mut ChaCha8Rng, weights: &[f64], count: usize) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            (u.ln() / w, i)
        })
        .collect();
    keyed.select_nth_unstable_by(count - 1, |a, b| b.0.total_cmp(&a.0));
    let mut chosen: Vec<usize> = keyed[..count].iter().map(|k| k.1).collect();
    chosen.sort_unstable();
    chosen
}

fn make_record(cfg: &SyntheticCorpusConfig, prototypes: &[Vec<f64>], weights: &[f64], i: usize) -> SyntheticRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(i as u64 + 1);
    let [lo, hi] = cfg.objects_per_scene;
    let size = rng.random_range(lo..=hi);
    let objects = weighted_distinct(&mut rng, weights, size);

    let mut sum = vec![0.0f64; cfg.latent_dim];
    for &o in &objects {
        for (s, p) in sum.iter_mut().zip(&prototypes[o]) {
            *s += p;
        }
    }
    let norm = sum.iter().map(|x| x * x).sum::<f64>().sqrt();
    let image = sum
        .iter()
        .map(|&s| {
            let noise = if cfg.noise_std > 0.0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                cfg.noise_std * z
            } else {
                0.0
            };
            let base = if norm > 0.0 { s / norm } else { 0.0 };
            (base + noise) as f32
        })
        .collect();

    let n_caption = ((cfg.caption_coverage * size as f64).ceil() as usize).clamp(1, size);
    let mut caption: Vec<usize> = index::sample(&mut rng, size, n_caption)
        .into_iter()
        .map(|j| objects[j])
        .collect();
    caption.sort_unstable();

    SyntheticRecord {
        id: record_id(i),
        objects,
        image,
        caption,
    }
}

/// Generates the corpus; identical configs give identical corpora.
pub fn generate_corpus(cfg: &SyntheticCorpusConfig) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let prototypes: Vec<Vec<f64>> = (0..cfg.vocab_size)
        .map(|_| unit_gaussian(&mut rng, cfg.latent_dim))
        .collect();
    let weights: Vec<f64> = (0..cfg.vocab_size)
        .map(|v| ((v + 1) as f64).powf(-cfg.zipf_exponent))
        .collect();
    let records = (0..cfg.n_records)
        .into_par_iter()
        .map(|i| make_record(cfg, &prototypes, &weights, i))
        .collect();
    Ok(SyntheticCorpus {
        config: cfg.clone(),
        labels: (0..cfg.vocab_size).map(label_name).collect(),
        prototypes,
        records,
    })
}
