//! End-to-end synthetic memorization experiments.
//!
//! corpus → caption (and optional semantic) dedup → disjoint A / B / public
//! split → train target on A and reference on B → embed A's captions and
//! the public images under both → audit. One run per grid point.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::corpus::{generate_corpus, SyntheticCorpus, SyntheticCorpusConfig, SyntheticRecord};
use super::train::{embed_captions, embed_images, held_out_loss, train, TrainConfig, TrainedModel, TrainingData};
use crate::audit::{run_audit, run_sample_audit, AuditConfig, PairedMetrics, PopulationReport, SampleAudit};
use crate::dedup::{caption_dedup, semantic_dedup, split_disjoint, CorpusIndex};
use crate::embedding_store::{assemble, AuditDataset};
use crate::error::{Error, Result};
use crate::metrics::SortKey;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSizes {
    pub a: usize,
    pub b: usize,
    pub public: usize,
    /// Held-out records for the utility proxy (validation InfoNCE loss).
    #[serde(default)]
    pub validation: usize,
}

/// Overrides applied to the base training config for one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridPoint {
    pub label: Option<String>,
    pub mask_ratio: Option<f64>,
    pub logit_scale: Option<f64>,
    pub weight_decay: Option<f64>,
    pub epochs: Option<usize>,
    pub early_stop_epoch: Option<usize>,
    /// Size of both training splits; the first records of the A and B pools.
    pub train_size: Option<usize>,
    pub seed: Option<u64>,
}

impl GridPoint {
    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        if let Some(v) = self.mask_ratio {
            c.mask_ratio = v;
        }
        if let Some(v) = self.logit_scale {
            c.logit_scale = v;
        }
        if let Some(v) = self.weight_decay {
            c.weight_decay = v;
        }
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if self.early_stop_epoch.is_some() {
            c.early_stop_epoch = self.early_stop_epoch;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        c
    }

    pub fn label_or(&self, index: usize) -> String {
        self.label.clone().unwrap_or_else(|| format!("run{index:02}"))
    }
}

/// Data the reference model is trained on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMode {
    /// The disjoint split B (the real test).
    #[default]
    DisjointSplit,
    /// Split A again, which must give all-zero gaps (null control).
    SameAsTarget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleLevelConfig {
    pub top_m: usize,
    pub sort_key: SortKey,
    pub l_grid: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus: SyntheticCorpusConfig,
    pub split: SplitSizes,
    #[serde(default)]
    pub split_seed: u64,
    /// Greedy semantic dedup on raw image vectors; no dedup when absent.
    #[serde(default)]
    pub semantic_dedup_threshold: Option<f64>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub grid: Vec<GridPoint>,
    #[serde(default)]
    pub audit: AuditConfig,
    #[serde(default)]
    pub reference: ReferenceMode,
    #[serde(default)]
    pub sample_level: Option<SampleLevelConfig>,
}

impl ExperimentConfig {
    /// Grid points to run; a single default point when the grid is empty.
    pub fn points(&self) -> Vec<GridPoint> {
        if self.grid.is_empty() {
            vec![GridPoint::default()]
        } else {
            self.grid.clone()
        }
    }

    fn max_train_sizes(&self) -> (usize, usize) {
        self.points()
            .iter()
            .fold((self.split.a, self.split.b), |(a, b), p| match p.train_size {
                Some(s) => (a.max(s), b.max(s)),
                None => (a, b),
            })
    }
}

/// Deduplicated corpus cut into the record pools used by every grid point.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub corpus: SyntheticCorpus,
    pub pool_a: Vec<usize>,
    pub pool_b: Vec<usize>,
    pub public: Vec<usize>,
    pub validation: Vec<usize>,
    pub n_after_dedup: usize,
}

impl PreparedData {
    fn records(&self, idx: &[usize]) -> Vec<SyntheticRecord> {
        idx.iter().map(|&i| self.corpus.records[i].clone()).collect()
    }

    fn data(&self, idx: &[usize]) -> TrainingData {
        let cfg = &self.corpus.config;
        TrainingData::from_records(&self.records(idx), cfg.vocab_size, cfg.latent_dim)
    }
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let corpus = generate_corpus(&cfg.corpus)?;
    let index = CorpusIndex::new(
        corpus.records.iter().map(|r| r.id.clone()).collect(),
        corpus.records.iter().map(|r| corpus.caption_text(r)).collect(),
    )?;
    let mut kept = caption_dedup(&index);
    if let Some(threshold) = cfg.semantic_dedup_threshold {
        let pos: BTreeMap<&str, usize> = corpus
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.as_str(), i))
            .collect();
        let chosen: Vec<&SyntheticRecord> = kept.iter().map(|id| &corpus.records[pos[id.as_str()]]).collect();
        let images = corpus.image_matrix(chosen).normalize()?;
        kept = semantic_dedup(&images, threshold)?;
    }
    let (max_a, max_b) = cfg.max_train_sizes();
    let split = split_disjoint(
        &kept,
        [max_a, max_b, cfg.split.public + cfg.split.validation],
        cfg.split_seed,
    )?;
    let pos: BTreeMap<&str, usize> = corpus
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.id.as_str(), i))
        .collect();
    let to_idx = |ids: &[String]| -> Vec<usize> { ids.iter().map(|id| pos[id.as_str()]).collect() };
    let public_all = to_idx(&split.public);
    let (public, validation) = public_all.split_at(cfg.split.public);
    Ok(PreparedData {
        pool_a: to_idx(&split.a),
        pool_b: to_idx(&split.b),
        public: public.to_vec(),
        validation: validation.to_vec(),
        n_after_dedup: kept.len(),
        corpus,
    })
}

/// Everything produced for one grid point.
#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub label: String,
    pub train_config: TrainConfig,
    pub train_size: usize,
    pub report: PopulationReport,
    pub paired: PairedMetrics,
    pub dataset: AuditDataset,
    pub target: TrainedModel,
    pub reference: TrainedModel,
    pub validation_loss: Option<f64>,
    pub sample: Option<SampleAudit>,
}

/// Trains, embeds and audits one grid point on prepared data.
pub fn run_point(
    cfg: &ExperimentConfig,
    prepared: &PreparedData,
    point: &GridPoint,
    index: usize,
) -> Result<ExperimentRun> {
    let train_cfg = point.apply(&cfg.train);
    let size_a = point.train_size.unwrap_or(cfg.split.a);
    let size_b = point.train_size.unwrap_or(cfg.split.b);
    let a_idx = &prepared.pool_a[..size_a];
    let b_idx = &prepared.pool_b[..size_b];

    let data_a = prepared.data(a_idx);
    let data_ref = match cfg.reference {
        ReferenceMode::DisjointSplit => prepared.data(b_idx),
        ReferenceMode::SameAsTarget => data_a.clone(),
    };
    let (target, reference) = rayon::join(|| train(&data_a, &train_cfg), || train(&data_ref, &train_cfg));
    let (target, reference) = (target?, reference?);

    let public = prepared.data(&prepared.public);
    let a_records = prepared.records(a_idx);
    let p_records = prepared.records(&prepared.public);
    let corpus = &prepared.corpus;
    let dataset = assemble(
        "A",
        embed_captions(&target.towers, &data_a),
        embed_captions(&reference.towers, &data_a),
        corpus.annotations(&a_records),
        embed_images(&target.towers, &public),
        embed_images(&reference.towers, &public),
        corpus.annotations(&p_records),
    )?;

    let (mut report, paired) = run_audit(&dataset, &cfg.audit)?;
    let validation_loss = if prepared.validation.len() >= 2 {
        Some(held_out_loss(
            &target.towers,
            &prepared.data(&prepared.validation),
            &train_cfg,
        )?)
    } else {
        None
    };
    let sample = match &cfg.sample_level {
        Some(s) => Some(run_sample_audit(&dataset, cfg.audit.k, s.top_m, s.sort_key, &s.l_grid)?),
        None => None,
    };

    let label = point.label_or(index);
    let md = &mut report.metadata;
    md.insert("grid_label".into(), json!(label));
    md.insert("train_size".into(), json!(size_a));
    md.insert(
        "train_config".into(),
        serde_json::to_value(&train_cfg).expect("config serializes"),
    );
    md.insert(
        "corpus_config".into(),
        serde_json::to_value(&cfg.corpus).expect("config serializes"),
    );
    md.insert(
        "reference_mode".into(),
        serde_json::to_value(cfg.reference).expect("mode serializes"),
    );
    md.insert("records_after_dedup".into(), json!(prepared.n_after_dedup));
    md.insert(
        "dedup".into(),
        json!(match cfg.semantic_dedup_threshold {
            Some(t) => format!(
                "caption (NFC + case fold + whitespace); semantic greedy ascending-ID, simplified, threshold {t}"
            ),
            None => "caption (NFC + case fold + whitespace)".to_string(),
        }),
    );
    md.insert(
        "utility_proxy".into(),
        json!("held-out InfoNCE loss of the target model"),
    );
    md.insert("validation_loss".into(), json!(validation_loss));
    md.insert("target_final_loss".into(), json!(target.loss_trace.last()));

    Ok(ExperimentRun {
        label,
        train_config: train_cfg,
        train_size: size_a,
        report,
        paired,
        dataset,
        target,
        reference,
        validation_loss,
        sample,
    })
}

/// Runs every grid point of `cfg` in order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ExperimentRun>> {
    for p in cfg.points() {
        p.apply(&cfg.train).validate()?;
        if p.train_size == Some(0) {
            return Err(Error::Argument("train size must be positive".into()));
        }
    }
    let prepared = prepare(cfg)?;
    cfg.points()
        .iter()
        .enumerate()
        .map(|(i, p)| run_point(cfg, &prepared, p, i))
        .collect()
}
