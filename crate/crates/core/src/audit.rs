//! The k-nearest-neighbor memorization test run over a whole split.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding_store::{AnnotationTable, AuditDataset};
use crate::error::{Error, Result};
use crate::knn::{batch_top_k, NeighborSet};
use crate::metrics::{
    bootstrap, gap_curve, rank_records, recovered_objects, sample_metrics, top_m_objects, BootstrapEstimate, GapCurve,
    GapMetric, SampleMetrics, SortKey,
};

/// How the predicted objects of a record are derived from its neighbors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum ObjectRule {
    /// Every object of every neighbor.
    Union,
    /// The `m` objects with the highest similarity-weighted votes.
    TopM { m: usize },
}

impl ObjectRule {
    pub fn top_m(self) -> Option<usize> {
        match self {
            ObjectRule::Union => None,
            ObjectRule::TopM { m } => Some(m),
        }
    }
}

/// Per-record scores of both models, aligned by record.
#[derive(Debug, Clone)]
pub struct PairedMetrics {
    pub target: Vec<SampleMetrics>,
    pub reference: Vec<SampleMetrics>,
}

impl PairedMetrics {
    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    /// Same records with the roles of the two models exchanged.
    pub fn swapped(&self) -> Self {
        PairedMetrics {
            target: self.reference.clone(),
            reference: self.target.clone(),
        }
    }

    /// Keeps only records that have at least one ground-truth object.
    pub fn with_truth(&self) -> Self {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| self.target[i].has_truth()).collect();
        PairedMetrics {
            target: keep.iter().map(|&i| self.target[i].clone()).collect(),
            reference: keep.iter().map(|&i| self.reference[i].clone()).collect(),
        }
    }

    pub fn rows(&self) -> Vec<RecordRow> {
        self.target
            .iter()
            .zip(&self.reference)
            .map(|(a, b)| RecordRow {
                id: a.record_id.clone(),
                p_a: a.precision,
                r_a: a.recall,
                f_a: a.f_score,
                p_b: b.precision,
                r_b: b.recall,
                f_b: b.f_score,
                n_correct_a: a.n_correct,
                min_dist: a.min_dist,
            })
            .collect()
    }
}

/// One line of the per-record CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub id: String,
    pub p_a: f64,
    pub r_a: f64,
    pub f_a: f64,
    pub p_b: f64,
    pub r_b: f64,
    pub f_b: f64,
    pub n_correct_a: usize,
    pub min_dist: f64,
}

/// Neighbor sets of every split caption under both models.
#[derive(Debug, Clone)]
pub struct Neighbors {
    pub target: Vec<NeighborSet>,
    pub reference: Vec<NeighborSet>,
}

pub fn find_neighbors(ds: &AuditDataset, k: usize) -> Result<Neighbors> {
    Ok(Neighbors {
        target: batch_top_k(&ds.text_target, &ds.public_target, k)?,
        reference: batch_top_k(&ds.text_reference, &ds.public_reference, k)?,
    })
}

fn score(
    nb: &NeighborSet,
    truth: &AnnotationTable,
    public: &AnnotationTable,
    rule: ObjectRule,
) -> Result<SampleMetrics> {
    let predicted = match rule {
        ObjectRule::Union => recovered_objects(nb, public)?,
        ObjectRule::TopM { m } => top_m_objects(nb, public, m)?,
    };
    let gt = truth
        .get(&nb.query_id)
        .ok_or_else(|| Error::Data(format!("record {} has no annotation", nb.query_id)))?;
    Ok(sample_metrics(gt, &predicted)
        .with_id(nb.query_id.clone())
        .with_min_dist(1.0 - nb.similarities[0]))
}

/// Scores every record under both models.
pub fn score_records(ds: &AuditDataset, neighbors: &Neighbors, rule: ObjectRule) -> Result<PairedMetrics> {
    let score_all = |sets: &[NeighborSet]| -> Result<Vec<SampleMetrics>> {
        sets.par_iter()
            .map(|nb| score(nb, &ds.ground_truth, &ds.public_annotations, rule))
            .collect()
    };
    let target = score_all(&neighbors.target)?;
    let mut reference = score_all(&neighbors.reference)?;
    // Distances used for ranking always come from the target model.
    for (r, t) in reference.iter_mut().zip(&target) {
        r.min_dist = t.min_dist;
    }
    Ok(PairedMetrics { target, reference })
}

pub fn evaluate(ds: &AuditDataset, k: usize, rule: ObjectRule) -> Result<PairedMetrics> {
    score_records(ds, &find_neighbors(ds, k)?, rule)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub reps: usize,
    pub fraction: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            reps: 100,
            fraction: 0.1,
            seed: 0,
        }
    }
}

/// Parameters of a population audit, echoed verbatim into its report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub k: usize,
    pub objects: ObjectRule,
    pub public_set: String,
    pub bootstrap: BootstrapConfig,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            k: crate::knn::DEFAULT_K,
            objects: ObjectRule::Union,
            public_set: "public".into(),
            bootstrap: BootstrapConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub ppg: BootstrapEstimate,
    pub prg: BootstrapEstimate,
    pub aucg: BootstrapEstimate,
}

impl BootstrapSummary {
    pub fn get(&self, metric: GapMetric) -> BootstrapEstimate {
        match metric {
            GapMetric::Ppg => self.ppg,
            GapMetric::Prg => self.prg,
            GapMetric::Aucg => self.aucg,
        }
    }
}

/// Conventions a reader needs to interpret the numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConventions {
    pub similarity: String,
    pub aucg: String,
    pub bootstrap_std: String,
    pub empty_ground_truth: String,
    pub top_m_scoring: String,
}

impl Default for ReportConventions {
    fn default() -> Self {
        ReportConventions {
            similarity: "cosine (inner product of L2-normalized embeddings)".into(),
            aucg: "signed: integral of F_reference - F_target over [0,1]; positive means the target recovers more"
                .into(),
            bootstrap_std: "population form (1/N)".into(),
            empty_ground_truth: "excluded from PRG and AUCG, included in PPG".into(),
            top_m_scoring: "objects ranked by summed neighbor similarity, ties by label".into(),
        }
    }
}

/// Population-level memorization of one target/reference pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationReport {
    pub split: String,
    pub ppg: f64,
    pub prg: f64,
    pub aucg: f64,
    pub bootstrap: BootstrapSummary,
    pub n_records: usize,
    /// Records without ground-truth objects, left out of PRG and AUCG.
    pub n_excluded_recall: usize,
    pub config: AuditConfig,
    pub conventions: ReportConventions,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

impl PopulationReport {
    pub fn summary_line(&self) -> String {
        format!(
            "PPG {:.4} ± {:.4}  PRG {:.4} ± {:.4}  AUCG {:.4} ± {:.4}  (n = {})",
            self.ppg,
            self.bootstrap.ppg.std,
            self.prg,
            self.bootstrap.prg.std,
            self.aucg,
            self.bootstrap.aucg.std,
            self.n_records
        )
    }
}

/// Point estimates on all records plus bootstrap spread.
pub fn population_report(split: &str, paired: &PairedMetrics, cfg: &AuditConfig) -> Result<PopulationReport> {
    let (a, b) = (&paired.target, &paired.reference);
    let ppg = GapMetric::Ppg.compute(a, b)?;
    let prg = GapMetric::Prg.compute(a, b)?;
    let aucg = GapMetric::Aucg.compute(a, b)?;
    let boot = |m: GapMetric| -> Result<BootstrapEstimate> {
        let n_eligible = if m == GapMetric::Ppg {
            a.len()
        } else {
            a.iter().filter(|x| x.has_truth()).count()
        };
        if n_eligible == 0 {
            return Ok(BootstrapEstimate { mean: 0.0, std: 0.0 });
        }
        let bc = &cfg.bootstrap;
        bootstrap(a, b, m, bc.fraction, bc.reps, bc.seed)
    };
    Ok(PopulationReport {
        split: split.to_string(),
        ppg,
        prg,
        aucg,
        bootstrap: BootstrapSummary {
            ppg: boot(GapMetric::Ppg)?,
            prg: boot(GapMetric::Prg)?,
            aucg: boot(GapMetric::Aucg)?,
        },
        n_records: a.len(),
        n_excluded_recall: a.iter().filter(|x| !x.has_truth()).count(),
        config: cfg.clone(),
        conventions: ReportConventions::default(),
        metadata: BTreeMap::new(),
    })
}

/// Runs the full population audit on an assembled dataset.
pub fn run_audit(ds: &AuditDataset, cfg: &AuditConfig) -> Result<(PopulationReport, PairedMetrics)> {
    let paired = evaluate(ds, cfg.k, cfg.objects)?;
    let report = population_report(&ds.split_name, &paired, cfg)?;
    Ok((report, paired))
}

/// Result of a sample-level audit.
#[derive(Debug, Clone)]
pub struct SampleAudit {
    pub curve: GapCurve,
    pub paired: PairedMetrics,
    /// Records dropped because they carry no ground-truth objects.
    pub n_excluded: usize,
}

/// Ranks records by vulnerability and reports the top-L gap curve.
///
/// Records without ground-truth objects are left out entirely.
pub fn run_sample_audit(
    ds: &AuditDataset,
    k: usize,
    top_m: usize,
    sort_key: SortKey,
    l_grid: &[usize],
) -> Result<SampleAudit> {
    let all = evaluate(ds, k, ObjectRule::TopM { m: top_m })?;
    let paired = all.with_truth();
    let ordering = rank_records(&paired.target, sort_key);
    let curve = gap_curve(&ordering, &paired.target, &paired.reference, l_grid, sort_key)?;
    Ok(SampleAudit {
        curve,
        n_excluded: all.len() - paired.len(),
        paired,
    })
}
