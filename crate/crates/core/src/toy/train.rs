//! Minibatch training of a [`TowerPair`] on synthetic records.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::corpus::SyntheticRecord;
use super::loss::{info_nce_with_grad, LossDirection};
use super::towers::{Input, TowerPair, TowerShape};
use crate::embedding_store::EmbeddingMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Inverse temperature multiplying every similarity logit.
    pub logit_scale: f64,
    /// Fraction of caption tokens dropped, drawn afresh every epoch.
    pub mask_ratio: f64,
    pub early_stop_epoch: Option<usize>,
    pub seed: u64,
    pub direction: LossDirection,
    pub optimizer: OptimizerKind,
    pub shape: TowerShape,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 16,
            learning_rate: 0.5,
            weight_decay: 0.0,
            logit_scale: 5.0,
            mask_ratio: 0.0,
            early_stop_epoch: None,
            seed: 0,
            direction: LossDirection::Symmetric,
            optimizer: OptimizerKind::Sgd,
            shape: TowerShape::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Argument("batch size must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return Err(Error::Argument(format!(
                "mask ratio {} outside [0, 1)",
                self.mask_ratio
            )));
        }
        let positive = |x: f64| x.is_finite() && x > 0.0;
        let non_negative = |x: f64| x.is_finite() && x >= 0.0;
        if !positive(self.learning_rate) || !non_negative(self.weight_decay) || !positive(self.logit_scale) {
            return Err(Error::Argument(
                "learning rate and logit scale must be positive, weight decay non-negative".into(),
            ));
        }
        if self.shape.embed_dim == 0 {
            return Err(Error::Argument("embedding dimension must be positive".into()));
        }
        Ok(())
    }

    /// Epochs actually run once early stopping is applied.
    pub fn effective_epochs(&self) -> usize {
        self.early_stop_epoch.map_or(self.epochs, |e| e.min(self.epochs))
    }
}

/// Drops exactly `⌊ratio · len⌋` uniformly chosen tokens, keeping order.
pub fn mask_tokens<R: Rng + ?Sized>(tokens: &[usize], ratio: f64, rng: &mut R) -> Vec<usize> {
    let drop = (ratio * tokens.len() as f64).floor() as usize;
    if drop == 0 {
        return tokens.to_vec();
    }
    let keep = tokens.len().saturating_sub(drop);
    let mut picked = index::sample(rng, tokens.len(), keep).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| tokens[i]).collect()
}

/// Caption bags and flattened raw image rows of a record set.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub ids: Vec<String>,
    pub captions: Vec<Vec<usize>>,
    pub images: Vec<f64>,
    pub image_dim: usize,
    pub vocab_size: usize,
}

impl TrainingData {
    pub fn from_records(records: &[SyntheticRecord], vocab_size: usize, image_dim: usize) -> Self {
        TrainingData {
            ids: records.iter().map(|r| r.id.clone()).collect(),
            captions: records.iter().map(|r| r.caption.clone()).collect(),
            images: records
                .iter()
                .flat_map(|r| r.image.iter().map(|&v| f64::from(v)))
                .collect(),
            image_dim,
            vocab_size,
        }
    }

    pub fn len(&self) -> usize {
        self.captions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.captions.is_empty()
    }

    fn image_rows(&self, idx: &[usize]) -> Vec<f64> {
        let d = self.image_dim;
        idx.iter()
            .flat_map(|&i| self.images[i * d..(i + 1) * d].iter().copied())
            .collect()
    }
}

/// InfoNCE loss of one batch and its gradient with respect to all tower
/// parameters.
pub fn tower_loss_grad(
    towers: &TowerPair,
    captions: &[Vec<usize>],
    images: &[f64],
    logit_scale: f64,
    direction: LossDirection,
) -> Result<(f64, TowerPair)> {
    let n = captions.len();
    let d = towers.embed_dim();
    let t_cache = towers.text.forward(Input::Tokens(captions), n);
    let v_cache = towers.image.forward(Input::Dense(images), n);
    let lg = info_nce_with_grad(&t_cache.embeddings, &v_cache.embeddings, d, logit_scale, direction)?;
    let mut grad = towers.zeros_like();
    towers
        .text
        .backward(Input::Tokens(captions), n, &t_cache, &lg.grad_text, &mut grad.text);
    towers
        .image
        .backward(Input::Dense(images), n, &v_cache, &lg.grad_image, &mut grad.image);
    Ok((lg.loss, grad))
}

/// Batch loss plus `wd/2 · |θ|²`, with matching gradient. This is the
/// objective whose proximal weight-decay step the optimizers take.
pub fn regularized_loss_grad(
    towers: &TowerPair,
    captions: &[Vec<usize>],
    images: &[f64],
    logit_scale: f64,
    direction: LossDirection,
    weight_decay: f64,
) -> Result<(f64, TowerPair)> {
    let (loss, mut grad) = tower_loss_grad(towers, captions, images, logit_scale, direction)?;
    let mut sq = 0.0;
    for (g, p) in grad.params_mut().into_iter().zip(towers.params()) {
        for (gi, pi) in g.iter_mut().zip(p) {
            *gi += weight_decay * pi;
            sq += pi * pi;
        }
    }
    Ok((loss + 0.5 * weight_decay * sq, grad))
}

struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    decay: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    fn new(cfg: &TrainConfig, towers: &TowerPair) -> Self {
        let zeros = || towers.params().iter().map(|p| vec![0.0; p.len()]).collect();
        Optimizer {
            kind: cfg.optimizer,
            lr: cfg.learning_rate,
            decay: cfg.weight_decay,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Gradient step followed by the decoupled decay `θ ← θ / (1 + lr·wd)`,
    /// the proximal step of `wd/2 · |θ|²`; stable for any decay strength.
    fn apply(&mut self, towers: &mut TowerPair, grad: &TowerPair) {
        self.step += 1;
        let shrink = 1.0 / (1.0 + self.lr * self.decay);
        let params = towers.params_mut();
        let grads = grad.params();
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.into_iter().zip(grads) {
                    for (pi, gi) in p.iter_mut().zip(g) {
                        *pi = (*pi - self.lr * gi) * shrink;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.step);
                let c2 = 1.0 - beta2.powi(self.step);
                for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
                    for i in 0..p.len() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                        let update = (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                        p[i] = (p[i] - self.lr * update) * shrink;
                    }
                }
            }
        }
    }
}

/// Trained towers with per-epoch diagnostics.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub towers: TowerPair,
    /// Mean training loss of each epoch.
    pub loss_trace: Vec<f64>,
    /// Parameter L2 norm after each epoch.
    pub param_norm_trace: Vec<f64>,
}

/// Trains fresh towers on `data`. Serial and bit-reproducible for a seed.
pub fn train(data: &TrainingData, cfg: &TrainConfig) -> Result<TrainedModel> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Argument("training set is empty".into()));
    }
    let mut towers = TowerPair::init(data.vocab_size, data.image_dim, cfg.shape, cfg.seed);
    let mut opt = Optimizer::new(cfg, &towers);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let mut loss_trace = Vec::new();
    let mut param_norm_trace = Vec::new();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 1..=cfg.effective_epochs() {
        order.shuffle(&mut rng);
        let (mut total, mut count) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            let captions: Vec<Vec<usize>> = batch
                .iter()
                .map(|&i| mask_tokens(&data.captions[i], cfg.mask_ratio, &mut rng))
                .collect();
            let images = data.image_rows(batch);
            let (loss, grad) =
                tower_loss_grad(&towers, &captions, &images, cfg.logit_scale, cfg.direction).map_err(|e| {
                    Error::Training {
                        epoch,
                        msg: e.to_string(),
                    }
                })?;
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    msg: format!("loss became {loss}"),
                });
            }
            opt.apply(&mut towers, &grad);
            total += loss * batch.len() as f64;
            count += batch.len();
        }
        if !towers.all_finite() {
            return Err(Error::Training {
                epoch,
                msg: "non-finite parameters".into(),
            });
        }
        loss_trace.push(if count > 0 { total / count as f64 } else { 0.0 });
        param_norm_trace.push(towers.param_norm());
    }
    Ok(TrainedModel {
        towers,
        loss_trace,
        param_norm_trace,
    })
}

/// Mean unmasked InfoNCE loss over consecutive batches of `data`.
pub fn held_out_loss(towers: &TowerPair, data: &TrainingData, cfg: &TrainConfig) -> Result<f64> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let (mut total, mut count) = (0.0, 0usize);
    for batch in idx.chunks(cfg.batch_size) {
        if batch.len() < 2 {
            continue;
        }
        let captions: Vec<Vec<usize>> = batch.iter().map(|&i| data.captions[i].clone()).collect();
        let (loss, _) = tower_loss_grad(
            towers,
            &captions,
            &data.image_rows(batch),
            cfg.logit_scale,
            cfg.direction,
        )?;
        total += loss * batch.len() as f64;
        count += batch.len();
    }
    if count == 0 {
        return Err(Error::Argument("held-out set needs at least 2 records".into()));
    }
    Ok(total / count as f64)
}

const EMBED_CHUNK: usize = 512;

fn to_matrix(ids: &[String], rows: Vec<f64>, dim: usize) -> EmbeddingMatrix {
    EmbeddingMatrix::from_unit_rows(ids.to_vec(), rows.into_iter().map(|v| v as f32).collect(), dim)
        .expect("tower outputs are unit norm")
}

/// Caption and image embeddings of `data` (captions unmasked), normalized.
pub fn embed_corpus(towers: &TowerPair, data: &TrainingData) -> (EmbeddingMatrix, EmbeddingMatrix) {
    let d = towers.embed_dim();
    let text: Vec<f64> = data
        .captions
        .par_chunks(EMBED_CHUNK)
        .flat_map_iter(|c| towers.embed_captions(c))
        .collect();
    let images: Vec<f64> = data
        .images
        .par_chunks(EMBED_CHUNK * data.image_dim)
        .flat_map_iter(|c| towers.embed_images(c))
        .collect();
    (to_matrix(&data.ids, text, d), to_matrix(&data.ids, images, d))
}

/// Image embeddings only, e.g. for a public set.
pub fn embed_images(towers: &TowerPair, data: &TrainingData) -> EmbeddingMatrix {
    let images: Vec<f64> = data
        .images
        .par_chunks(EMBED_CHUNK * data.image_dim)
        .flat_map_iter(|c| towers.embed_images(c))
        .collect();
    to_matrix(&data.ids, images, towers.embed_dim())
}

/// Caption embeddings only.
pub fn embed_captions(towers: &TowerPair, data: &TrainingData) -> EmbeddingMatrix {
    let text: Vec<f64> = data
        .captions
        .par_chunks(EMBED_CHUNK)
        .flat_map_iter(|c| towers.embed_captions(c))
        .collect();
    to_matrix(&data.ids, text, towers.embed_dim())
}
