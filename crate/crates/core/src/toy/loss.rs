//! InfoNCE contrastive loss with analytic gradients.
//!
//! Logits are `S[i][j] = s · <t_i, v_j>` for caption embeddings `t`, image
//! embeddings `v` and logit scale `s = 1/τ`. Matching pairs sit on the
//! diagonal; every other in-batch item is a negative.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which softmax the loss normalizes over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossDirection {
    /// Each caption picks its image among all images in the batch.
    TextToImage,
    /// Each image picks its caption among all captions in the batch.
    ImageToText,
    /// Mean of both directions.
    #[default]
    Symmetric,
}

/// Loss value and its gradients with respect to both embedding batches.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub grad_text: Vec<f64>,
    pub grad_image: Vec<f64>,
}

fn check_batch(text: &[f64], image: &[f64], dim: usize) -> Result<usize> {
    if dim == 0 || !text.len().is_multiple_of(dim) || image.len() != text.len() {
        return Err(Error::Argument(format!(
            "caption batch ({} values) and image batch ({} values) do not form equal batches of dimension {dim}",
            text.len(),
            image.len()
        )));
    }
    let n = text.len() / dim;
    if n < 2 {
        return Err(Error::Argument("InfoNCE needs a batch of at least 2 pairs".into()));
    }
    if text.iter().chain(image).any(|v| !v.is_finite()) {
        return Err(Error::Argument("non-finite embedding value".into()));
    }
    Ok(n)
}

/// Softmax cross-entropy against the diagonal along rows (`by_row`) or
/// columns of the `n x n` logit matrix. Returns the mean loss and adds
/// `weight * dL/dS` into `grad`.
fn diagonal_xent(logits: &[f64], n: usize, by_row: bool, weight: f64, grad: &mut [f64]) -> f64 {
    let at = |i: usize, j: usize| if by_row { i * n + j } else { j * n + i };
    let mut total = 0.0;
    for i in 0..n {
        let max = (0..n).map(|j| logits[at(i, j)]).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = (0..n).map(|j| (logits[at(i, j)] - max).exp()).sum();
        let lse = max + sum.ln();
        total += lse - logits[at(i, i)];
        for j in 0..n {
            let p = (logits[at(i, j)] - lse).exp();
            let target = if i == j { 1.0 } else { 0.0 };
            grad[at(i, j)] += weight * (p - target) / n as f64;
        }
    }
    total / n as f64
}

/// InfoNCE loss of row-major batches `text` and `image` (`n x dim` each).
pub fn info_nce_loss(
    text: &[f64],
    image: &[f64],
    dim: usize,
    logit_scale: f64,
    direction: LossDirection,
) -> Result<f64> {
    info_nce_with_grad(text, image, dim, logit_scale, direction).map(|g| g.loss)
}

/// InfoNCE loss plus gradients with respect to every embedding coordinate.
pub fn info_nce_with_grad(
    text: &[f64],
    image: &[f64],
    dim: usize,
    logit_scale: f64,
    direction: LossDirection,
) -> Result<LossGrad> {
    let n = check_batch(text, image, dim)?;
    let mut logits = vec![0.0; n * n];
    for i in 0..n {
        let t = &text[i * dim..(i + 1) * dim];
        for j in 0..n {
            let v = &image[j * dim..(j + 1) * dim];
            logits[i * n + j] = logit_scale * t.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    let mut g = vec![0.0; n * n];
    let loss = match direction {
        LossDirection::TextToImage => diagonal_xent(&logits, n, true, 1.0, &mut g),
        LossDirection::ImageToText => diagonal_xent(&logits, n, false, 1.0, &mut g),
        LossDirection::Symmetric => {
            0.5 * diagonal_xent(&logits, n, true, 0.5, &mut g) + 0.5 * diagonal_xent(&logits, n, false, 0.5, &mut g)
        }
    };

    // dL/dt_i = s Σ_j G_ij v_j ;  dL/dv_j = s Σ_i G_ij t_i
    let mut grad_text = vec![0.0; n * dim];
    let mut grad_image = vec![0.0; n * dim];
    for i in 0..n {
        for j in 0..n {
            let gij = logit_scale * g[i * n + j];
            if gij == 0.0 {
                continue;
            }
            for c in 0..dim {
                grad_text[i * dim + c] += gij * image[j * dim + c];
                grad_image[j * dim + c] += gij * text[i * dim + c];
            }
        }
    }
    Ok(LossGrad {
        loss,
        grad_text,
        grad_image,
    })
}
