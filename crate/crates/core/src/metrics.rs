//! Memorization measurements computed from neighbor sets and annotations.
//!
//! Per-record scores compare the objects recovered from a caption's public
//! neighbors against the objects actually present in the training image.
//! Population gaps compare the target model (trained on the record) with
//! the reference model (not trained on it): positive values everywhere mean
//! the target recovers more, i.e. memorization.

use std::collections::HashMap;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding_store::{AnnotationTable, ObjectLabelSet};
use crate::error::{Error, Result};
use crate::knn::NeighborSet;

/// Object-recovery scores of one record under one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetrics {
    pub record_id: String,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    /// Ground-truth objects found among the recovered ones.
    pub n_correct: usize,
    /// Size of the ground-truth set; recall is undefined when zero.
    pub n_truth: usize,
    /// Size of the recovered set.
    pub n_recovered: usize,
    /// Cosine distance from the caption to its nearest public image.
    pub min_dist: f64,
}

impl SampleMetrics {
    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.record_id = id.into();
        self
    }

    pub fn with_min_dist(mut self, d: f64) -> Self {
        self.min_dist = d;
        self
    }

    pub fn has_truth(&self) -> bool {
        self.n_truth > 0
    }
}

pub fn harmonic_mean(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

fn labels_of<'a>(id: &str, table: &'a AnnotationTable) -> Result<&'a ObjectLabelSet> {
    table
        .get(id)
        .ok_or_else(|| Error::Data(format!("public image {id} has no annotation")))
}

/// Union of the object sets of every neighbor.
pub fn recovered_objects(neighbors: &NeighborSet, public_annotations: &AnnotationTable) -> Result<ObjectLabelSet> {
    let mut out = ObjectLabelSet::new();
    for id in &neighbors.neighbor_ids {
        out.extend(labels_of(id, public_annotations)?.iter().cloned());
    }
    Ok(out)
}

/// The `m` objects with the largest similarity-weighted votes.
///
/// Each neighbor adds its similarity to the score of every object it
/// contains; ties go to the smaller label.
pub fn top_m_objects(
    neighbors: &NeighborSet,
    public_annotations: &AnnotationTable,
    m: usize,
) -> Result<ObjectLabelSet> {
    if m == 0 {
        return Err(Error::Argument("top-m must be positive".into()));
    }
    let mut scores: HashMap<&str, f64> = HashMap::new();
    for (id, sim) in neighbors.iter() {
        for label in labels_of(id, public_annotations)? {
            *scores.entry(label.as_str()).or_insert(0.0) += sim;
        }
    }
    let mut ranked: Vec<(&str, f64)> = scores.into_iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Ok(ranked.into_iter().take(m).map(|(l, _)| l.to_string()).collect())
}

/// Precision, recall and F-score of `recovered` against `ground_truth`.
pub fn sample_metrics(ground_truth: &ObjectLabelSet, recovered: &ObjectLabelSet) -> SampleMetrics {
    let n_correct = ground_truth.intersection(recovered).count();
    let precision = if recovered.is_empty() {
        0.0
    } else {
        n_correct as f64 / recovered.len() as f64
    };
    let recall = if ground_truth.is_empty() {
        0.0
    } else {
        n_correct as f64 / ground_truth.len() as f64
    };
    SampleMetrics {
        record_id: String::new(),
        precision,
        recall,
        f_score: harmonic_mean(precision, recall),
        n_correct,
        n_truth: ground_truth.len(),
        n_recovered: recovered.len(),
        min_dist: 0.0,
    }
}

fn check_aligned(a: &[SampleMetrics], b: &[SampleMetrics]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Argument(format!(
            "metric tables differ in length: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let bad: Vec<&str> = a
        .iter()
        .zip(b)
        .filter(|(x, y)| x.record_id != y.record_id)
        .map(|(x, _)| x.record_id.as_str())
        .collect();
    if !bad.is_empty() {
        return Err(Error::Argument(format!(
            "metric tables are not aligned at records: {}",
            bad.join(", ")
        )));
    }
    Ok(())
}

/// (#{x > y} - #{x < y}) / n.
fn sign_gap(pairs: impl Iterator<Item = (f64, f64)>) -> f64 {
    let (mut wins, mut losses, mut n) = (0i64, 0i64, 0i64);
    for (x, y) in pairs {
        n += 1;
        if x > y {
            wins += 1;
        } else if x < y {
            losses += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        (wins - losses) as f64 / n as f64
    }
}

/// Population precision gap and population recall gap.
///
/// Records without ground-truth objects count towards the precision gap
/// only; the recall gap is taken over the remaining records.
pub fn population_gaps(metrics_a: &[SampleMetrics], metrics_b: &[SampleMetrics]) -> Result<(f64, f64)> {
    check_aligned(metrics_a, metrics_b)?;
    if metrics_a.is_empty() {
        return Err(Error::Argument("no records to compare".into()));
    }
    let ppg = sign_gap(metrics_a.iter().zip(metrics_b).map(|(a, b)| (a.precision, b.precision)));
    let prg = sign_gap(
        metrics_a
            .iter()
            .zip(metrics_b)
            .filter(|(a, _)| a.has_truth())
            .map(|(a, b)| (a.recall, b.recall)),
    );
    Ok((ppg, prg))
}

/// Signed area between the empirical recall CDFs, `∫₀¹ F_B(t) - F_A(t) dt`.
///
/// Integrated exactly over the merged breakpoints of both step functions.
/// Equals `mean(recalls_a) - mean(recalls_b)` up to rounding.
pub fn auc_gap(recalls_a: &[f64], recalls_b: &[f64]) -> Result<f64> {
    if recalls_a.is_empty() || recalls_b.is_empty() {
        return Err(Error::Argument("auc gap of an empty recall list".into()));
    }
    if recalls_a.len() != recalls_b.len() {
        return Err(Error::Argument(format!(
            "recall lists differ in length: {} vs {}",
            recalls_a.len(),
            recalls_b.len()
        )));
    }
    if let Some(v) = recalls_a.iter().chain(recalls_b).find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Argument(format!("recall {v} outside [0, 1]")));
    }
    let mut a = recalls_a.to_vec();
    let mut b = recalls_b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);

    let mut breaks: Vec<f64> = a.iter().chain(&b).copied().chain([0.0, 1.0]).collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    // Counts of samples <= t, advanced monotonically over the breakpoints.
    let (mut ia, mut ib) = (0usize, 0usize);
    let mut area = 0.0;
    for w in breaks.windows(2) {
        let (t, next) = (w[0], w[1]);
        while ia < a.len() && a[ia] <= t {
            ia += 1;
        }
        while ib < b.len() && b[ib] <= t {
            ib += 1;
        }
        area += (ib as f64 / nb - ia as f64 / na) * (next - t);
    }
    Ok(area)
}

/// Population-level statistic recomputed by the bootstrap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GapMetric {
    Ppg,
    Prg,
    Aucg,
}

impl GapMetric {
    pub const ALL: [GapMetric; 3] = [GapMetric::Ppg, GapMetric::Prg, GapMetric::Aucg];

    fn uses_recall(self) -> bool {
        !matches!(self, GapMetric::Ppg)
    }

    /// Evaluates the metric on aligned tables.
    pub fn compute(self, a: &[SampleMetrics], b: &[SampleMetrics]) -> Result<f64> {
        match self {
            GapMetric::Ppg => population_gaps(a, b).map(|g| g.0),
            GapMetric::Prg => population_gaps(a, b).map(|g| g.1),
            GapMetric::Aucg => {
                check_aligned(a, b)?;
                let (ra, rb): (Vec<f64>, Vec<f64>) = a
                    .iter()
                    .zip(b)
                    .filter(|(x, _)| x.has_truth())
                    .map(|(x, y)| (x.recall, y.recall))
                    .unzip();
                if ra.is_empty() {
                    return Ok(0.0);
                }
                auc_gap(&ra, &rb)
            }
        }
    }
}

impl FromStr for GapMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ppg" => Ok(GapMetric::Ppg),
            "prg" => Ok(GapMetric::Prg),
            "aucg" => Ok(GapMetric::Aucg),
            other => Err(Error::Argument(format!("unknown gap metric {other:?}"))),
        }
    }
}

/// Mean and uncorrected (1/N) standard deviation over bootstrap replicates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapEstimate {
    pub mean: f64,
    pub std: f64,
}

impl BootstrapEstimate {
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        BootstrapEstimate { mean, std: var.sqrt() }
    }
}

/// Records that take part in `metric`: all of them for PPG, only those with
/// ground truth for the recall-based metrics.
fn eligible(metric: GapMetric, a: &[SampleMetrics]) -> Vec<usize> {
    (0..a.len())
        .filter(|&i| !metric.uses_recall() || a[i].has_truth())
        .collect()
}

/// Bootstrap with a caller-supplied index sampler.
///
/// `sampler(rep, n)` returns indices into the `n` eligible records.
pub fn bootstrap_with<F>(
    metrics_a: &[SampleMetrics],
    metrics_b: &[SampleMetrics],
    metric: GapMetric,
    reps: usize,
    sampler: F,
) -> Result<BootstrapEstimate>
where
    F: Fn(usize, usize) -> Vec<usize> + Sync,
{
    check_aligned(metrics_a, metrics_b)?;
    if reps == 0 {
        return Err(Error::Argument("bootstrap needs at least one repetition".into()));
    }
    let pool = eligible(metric, metrics_a);
    if pool.is_empty() {
        return Err(Error::Argument(format!("no records eligible for {metric:?}")));
    }
    let values = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let picks = sampler(rep, pool.len());
            let a: Vec<SampleMetrics> = picks.iter().map(|&i| metrics_a[pool[i]].clone()).collect();
            let b: Vec<SampleMetrics> = picks.iter().map(|&i| metrics_b[pool[i]].clone()).collect();
            metric.compute(&a, &b)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(BootstrapEstimate::from_samples(&values))
}

/// Resamples `⌈fraction · n⌉` records with replacement `reps` times.
///
/// Replicate `r` draws from ChaCha8 stream `r` of `seed`, so the result does
/// not depend on how replicates are scheduled.
pub fn bootstrap(
    metrics_a: &[SampleMetrics],
    metrics_b: &[SampleMetrics],
    metric: GapMetric,
    fraction: f64,
    reps: usize,
    seed: u64,
) -> Result<BootstrapEstimate> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Argument(format!("bootstrap fraction {fraction} outside (0, 1]")));
    }
    bootstrap_with(metrics_a, metrics_b, metric, reps, |rep, n| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(rep as u64);
        let size = ((fraction * n as f64).ceil() as usize).max(1);
        (0..size).map(|_| rng.random_range(0..n)).collect()
    })
}

/// Record ordering used for sample-level analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SortKey {
    /// Ascending caption-to-nearest-public-image distance (target model).
    MinDist,
    /// Descending number of correctly recovered objects (target model).
    CorrectPreds,
}

impl SortKey {
    pub fn as_str(self) -> &'static str {
        match self {
            SortKey::MinDist => "min_dist",
            SortKey::CorrectPreds => "correct_preds",
        }
    }
}

impl FromStr for SortKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "min_dist" => Ok(SortKey::MinDist),
            "correct_preds" => Ok(SortKey::CorrectPreds),
            other => Err(Error::Argument(format!(
                "unknown sort key {other:?} (expected min_dist or correct_preds)"
            ))),
        }
    }
}

/// Indices of `target` from most to least vulnerable; ties by record ID.
pub fn rank_records(target: &[SampleMetrics], key: SortKey) -> Vec<usize> {
    let mut order: Vec<usize> = (0..target.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (&target[i], &target[j]);
        let primary = match key {
            SortKey::MinDist => a.min_dist.total_cmp(&b.min_dist),
            SortKey::CorrectPreds => b.n_correct.cmp(&a.n_correct),
        };
        primary.then_with(|| a.record_id.cmp(&b.record_id))
    });
    order
}

/// Mean target-minus-reference gaps over the top `l` ranked records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapPoint {
    pub l: usize,
    pub precision_gap: f64,
    pub recall_gap: f64,
    pub f_score_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapCurve {
    pub sort_key: SortKey,
    pub record_ids: Vec<String>,
    pub points: Vec<GapPoint>,
}

pub fn gap_curve(
    ordering: &[usize],
    metrics_a: &[SampleMetrics],
    metrics_b: &[SampleMetrics],
    l_grid: &[usize],
    sort_key: SortKey,
) -> Result<GapCurve> {
    check_aligned(metrics_a, metrics_b)?;
    let n = metrics_a.len();
    if ordering.len() != n {
        return Err(Error::Argument(format!(
            "ordering covers {} of {n} records",
            ordering.len()
        )));
    }
    if let Some(&l) = l_grid.iter().find(|&&l| l == 0 || l > n) {
        return Err(Error::Argument(format!("L = {l} outside [1, {n}]")));
    }
    if l_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Argument("L grid must be strictly increasing".into()));
    }
    let points = l_grid
        .iter()
        .map(|&l| {
            let mut sums = [0.0f64; 3];
            for &i in &ordering[..l] {
                let (a, b) = (&metrics_a[i], &metrics_b[i]);
                sums[0] += a.precision - b.precision;
                sums[1] += a.recall - b.recall;
                sums[2] += a.f_score - b.f_score;
            }
            let lf = l as f64;
            GapPoint {
                l,
                precision_gap: sums[0] / lf,
                recall_gap: sums[1] / lf,
                f_score_gap: sums[2] / lf,
            }
        })
        .collect();
    Ok(GapCurve {
        sort_key,
        record_ids: ordering.iter().map(|&i| metrics_a[i].record_id.clone()).collect(),
        points,
    })
}
