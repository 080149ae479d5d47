//! Two small encoder towers mapping captions and images to a shared space.
//!
//! Captions enter as bags of token indices (an indicator vector over the
//! vocabulary, stored sparsely); images enter as their raw vectors. Each
//! tower is an affine map, optionally preceded by one `tanh` hidden layer,
//! and its output is L2-normalized.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Row-major `c (m x n) = beta * c + a (m x k) * b (k x n)` with explicit
/// strides, so transposed operands need no copies.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Affine layer `y = x W + b` with `W` stored `in_dim x out_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    fn init(in_dim: usize, out_dim: usize, std: f64, rng: &mut ChaCha8Rng) -> Self {
        Dense {
            in_dim,
            out_dim,
            w: (0..in_dim * out_dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    std * z
                })
                .collect(),
            b: vec![0.0; out_dim],
        }
    }

    fn zeros_like(&self) -> Self {
        Dense {
            in_dim: self.in_dim,
            out_dim: self.out_dim,
            w: vec![0.0; self.w.len()],
            b: vec![0.0; self.b.len()],
        }
    }

    fn forward(&self, x: &Input<'_>, n: usize) -> Vec<f64> {
        let o = self.out_dim;
        let mut y: Vec<f64> = (0..n).flat_map(|_| self.b.iter().copied()).collect();
        match x {
            Input::Tokens(bags) => {
                for (i, bag) in bags.iter().enumerate() {
                    let yi = &mut y[i * o..(i + 1) * o];
                    for &t in bag.iter() {
                        for (acc, w) in yi.iter_mut().zip(&self.w[t * o..(t + 1) * o]) {
                            *acc += w;
                        }
                    }
                }
            }
            Input::Dense(data) => {
                gemm(n, self.in_dim, o, data, (self.in_dim, 1), &self.w, (o, 1), 1.0, &mut y);
            }
        }
        y
    }

    /// Accumulates parameter gradients into `grad`; returns `dL/dx` for
    /// dense inputs when `want_input_grad`.
    fn backward(
        &self,
        x: &Input<'_>,
        dy: &[f64],
        n: usize,
        grad: &mut Dense,
        want_input_grad: bool,
    ) -> Option<Vec<f64>> {
        let o = self.out_dim;
        for i in 0..n {
            for (gb, d) in grad.b.iter_mut().zip(&dy[i * o..(i + 1) * o]) {
                *gb += d;
            }
        }
        match x {
            Input::Tokens(bags) => {
                for (i, bag) in bags.iter().enumerate() {
                    let di = &dy[i * o..(i + 1) * o];
                    for &t in bag.iter() {
                        for (gw, d) in grad.w[t * o..(t + 1) * o].iter_mut().zip(di) {
                            *gw += d;
                        }
                    }
                }
                None
            }
            Input::Dense(data) => {
                // dW (in x out) += X^T (in x n) dY (n x out)
                gemm(self.in_dim, n, o, data, (1, self.in_dim), dy, (o, 1), 1.0, &mut grad.w);
                want_input_grad.then(|| {
                    // dX (n x in) = dY (n x out) W^T (out x in)
                    let mut dx = vec![0.0; n * self.in_dim];
                    gemm(n, o, self.in_dim, dy, (o, 1), &self.w, (1, o), 0.0, &mut dx);
                    dx
                })
            }
        }
    }
}

/// Batched tower input.
#[derive(Debug, Clone, Copy)]
pub enum Input<'a> {
    /// One bag of token indices per item.
    Tokens(&'a [Vec<usize>]),
    /// Row-major dense rows.
    Dense(&'a [f64]),
}

/// Optional `tanh` hidden layer followed by a linear projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tower {
    pub hidden: Option<Dense>,
    pub out: Dense,
}

/// Intermediate values kept for the backward pass.
pub struct TowerCache {
    hidden_act: Option<Vec<f64>>,
    raw: Vec<f64>,
    norms: Vec<f64>,
    pub embeddings: Vec<f64>,
}

impl Tower {
    fn init(in_dim: usize, hidden: usize, out_dim: usize, sparse_input: bool, rng: &mut ChaCha8Rng) -> Self {
        // Bag-of-token inputs activate a handful of rows, not `in_dim` of them.
        let first_std = if sparse_input {
            0.5
        } else {
            (1.0 / in_dim as f64).sqrt()
        };
        if hidden == 0 {
            Tower {
                hidden: None,
                out: Dense::init(in_dim, out_dim, first_std, rng),
            }
        } else {
            Tower {
                hidden: Some(Dense::init(in_dim, hidden, first_std, rng)),
                out: Dense::init(hidden, out_dim, (1.0 / hidden as f64).sqrt(), rng),
            }
        }
    }

    fn zeros_like(&self) -> Self {
        Tower {
            hidden: self.hidden.as_ref().map(Dense::zeros_like),
            out: self.out.zeros_like(),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.out.out_dim
    }

    /// Embeds `n` items; rows of `cache.embeddings` are unit-norm.
    pub fn forward(&self, x: Input<'_>, n: usize) -> TowerCache {
        let (hidden_act, raw) = match &self.hidden {
            Some(h) => {
                let mut a = h.forward(&x, n);
                a.iter_mut().for_each(|v| *v = v.tanh());
                let raw = self.out.forward(&Input::Dense(&a), n);
                (Some(a), raw)
            }
            None => (None, self.out.forward(&x, n)),
        };
        let d = self.out_dim();
        let mut norms = Vec::with_capacity(n);
        let mut embeddings = raw.clone();
        for row in embeddings.chunks_exact_mut(d) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            row.iter_mut().for_each(|v| *v /= norm);
            norms.push(norm);
        }
        TowerCache {
            hidden_act,
            raw,
            norms,
            embeddings,
        }
    }

    /// Backpropagates `d_emb = dL/d(embeddings)` into `grad`.
    pub fn backward(&self, x: Input<'_>, n: usize, cache: &TowerCache, d_emb: &[f64], grad: &mut Tower) {
        let d = self.out_dim();
        // Through u = e / |e|: dL/de = (g - (g·u) u) / |e|.
        let mut d_raw = vec![0.0; n * d];
        for i in 0..n {
            let u = &cache.embeddings[i * d..(i + 1) * d];
            let g = &d_emb[i * d..(i + 1) * d];
            let gu: f64 = g.iter().zip(u).map(|(a, b)| a * b).sum();
            for c in 0..d {
                d_raw[i * d + c] = (g[c] - gu * u[c]) / cache.norms[i];
            }
        }
        debug_assert_eq!(cache.raw.len(), n * d);
        match (&self.hidden, &mut grad.hidden) {
            (Some(h), Some(gh)) => {
                let act = cache.hidden_act.as_ref().expect("hidden activations cached");
                let mut d_act = self
                    .out
                    .backward(&Input::Dense(act), &d_raw, n, &mut grad.out, true)
                    .expect("dense input gradient");
                for (da, a) in d_act.iter_mut().zip(act) {
                    *da *= 1.0 - a * a;
                }
                h.backward(&x, &d_act, n, gh, false);
            }
            _ => {
                self.out.backward(&x, &d_raw, n, &mut grad.out, false);
            }
        }
    }

    fn params(&self) -> Vec<&Vec<f64>> {
        let mut v = Vec::new();
        if let Some(h) = &self.hidden {
            v.push(&h.w);
            v.push(&h.b);
        }
        v.push(&self.out.w);
        v.push(&self.out.b);
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut v = Vec::new();
        if let Some(h) = &mut self.hidden {
            v.push(&mut h.w);
            v.push(&mut h.b);
        }
        v.push(&mut self.out.w);
        v.push(&mut self.out.b);
        v
    }
}

/// Tower shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TowerShape {
    pub embed_dim: usize,
    /// Hidden width of the caption tower; 0 means purely affine.
    pub text_hidden: usize,
    /// Hidden width of the image tower; 0 means purely affine.
    pub image_hidden: usize,
}

impl Default for TowerShape {
    fn default() -> Self {
        TowerShape {
            embed_dim: 32,
            text_hidden: 256,
            image_hidden: 0,
        }
    }
}

/// Caption and image encoders trained jointly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TowerPair {
    pub text: Tower,
    pub image: Tower,
    pub vocab_size: usize,
    pub image_dim: usize,
}

impl TowerPair {
    /// Seeded initialization; the same seed always gives the same towers.
    pub fn init(vocab_size: usize, image_dim: usize, shape: TowerShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let text = Tower::init(vocab_size, shape.text_hidden, shape.embed_dim, true, &mut rng);
        let image = Tower::init(image_dim, shape.image_hidden, shape.embed_dim, false, &mut rng);
        TowerPair {
            text,
            image,
            vocab_size,
            image_dim,
        }
    }

    pub fn zeros_like(&self) -> Self {
        TowerPair {
            text: self.text.zeros_like(),
            image: self.image.zeros_like(),
            vocab_size: self.vocab_size,
            image_dim: self.image_dim,
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.text.out_dim()
    }

    /// All parameter buffers in a fixed order.
    pub fn params(&self) -> Vec<&Vec<f64>> {
        let mut v = self.text.params();
        v.extend(self.image.params());
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut v = self.text.params_mut();
        v.extend(self.image.params_mut());
        v
    }

    pub fn n_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn param_norm(&self) -> f64 {
        self.params()
            .iter()
            .flat_map(|p| p.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Every parameter flattened in [`TowerPair::params`] order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.params().into_iter().flatten().copied().collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for p in self.params_mut() {
            let len = p.len();
            p.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        assert_eq!(offset, flat.len(), "parameter count mismatch");
    }

    pub fn embed_captions(&self, captions: &[Vec<usize>]) -> Vec<f64> {
        self.text.forward(Input::Tokens(captions), captions.len()).embeddings
    }

    pub fn embed_images(&self, images: &[f64]) -> Vec<f64> {
        self.image
            .forward(Input::Dense(images), images.len() / self.image_dim)
            .embeddings
    }

    pub fn all_finite(&self) -> bool {
        self.params().iter().all(|p| p.iter().all(|v| v.is_finite()))
    }
}
