//! Int8 candidate screen built on AVX-512 VNNI.
//!
//! Each row `x` is stored as `s * x_q + e` with `x_q` in `[-127, 127]^d`,
//! `s = max|x_j| / 127` and residual `e`. For a query `q` and public row `p`
//! the integer product gives `s_q s_p (q_q . p_q)`, which differs from
//! `q . p` by at most `|s_q q_q| |e_p| + |e_q| |s_p p_q| + |e_q| |e_p|`.
//! The screen keeps every row whose approximate score is within twice that
//! bound (plus float slack) of the running k-th best approximate score.

#[cfg(target_arch = "x86_64")]
use std::arch::x86_64::*;

use rayon::prelude::*;

use super::Pool;
use crate::embedding_store::EmbeddingMatrix;

/// Public rows per packed panel (two 16-lane registers).
const PANEL: usize = 32;
/// Queries per register tile.
const MR: usize = 12;
/// Largest dimension whose integer products cannot overflow `i32`.
pub(super) const MAX_DIM: usize = 16384;

pub(super) fn available() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        is_x86_feature_detected!("avx512f")
            && is_x86_feature_detected!("avx512bw")
            && is_x86_feature_detected!("avx512vnni")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

/// One row quantized: scale, integer codes, and the norms used by the bound.
struct Quantized {
    scale: f32,
    /// `|s x_q|`
    approx_norm: f64,
    /// `|x - s x_q|`
    residual_norm: f64,
}

fn quantize_row(row: &[f32], codes: &mut [i8]) -> Quantized {
    let max_abs = row.iter().fold(0.0f32, |m, &x| m.max(x.abs()));
    let scale = max_abs / 127.0;
    let (mut approx, mut resid) = (0.0f64, 0.0f64);
    for (c, &x) in codes.iter_mut().zip(row) {
        let q = if scale > 0.0 {
            (x / scale).round().clamp(-127.0, 127.0)
        } else {
            0.0
        };
        *c = q as i8;
        let back = f64::from(scale) * f64::from(q);
        approx += back * back;
        let r = f64::from(x) - back;
        resid += r * r;
    }
    Quantized {
        scale,
        approx_norm: approx.sqrt(),
        residual_norm: resid.sqrt(),
    }
}

/// Public rows quantized and packed into panels of [`PANEL`] rows. Within a
/// panel, dimension group `t` (4 dims) occupies 128 bytes: 4 bytes per row.
pub(super) struct Int8Screen<'a> {
    public: &'a EmbeddingMatrix,
    /// Padded dimension / 4.
    d4: usize,
    panels: Vec<i8>,
    scale: Vec<f32>,
    /// `128 * sum(p_q)`, removing the unsigned query offset.
    bias: Vec<i32>,
    max_approx_norm: f64,
    max_residual_norm: f64,
}

impl<'a> Int8Screen<'a> {
    pub(super) fn new(public: &'a EmbeddingMatrix) -> Self {
        let d = public.dim();
        let d4 = d.div_ceil(4);
        let n_panels = public.len().div_ceil(PANEL);
        let panel_bytes = d4 * 4 * PANEL;
        let mut panels = vec![0i8; n_panels * panel_bytes];
        let padded = n_panels * PANEL;
        let mut scale = vec![0.0f32; padded];
        let mut bias = vec![0i32; padded];

        let stats: Vec<(f64, f64)> = panels
            .par_chunks_mut(panel_bytes)
            .zip(scale.par_chunks_mut(PANEL))
            .zip(bias.par_chunks_mut(PANEL))
            .enumerate()
            .map(|(pi, ((panel, sc), bi))| {
                let mut codes = vec![0i8; d];
                let (mut a_max, mut e_max) = (0.0f64, 0.0f64);
                for r in 0..PANEL {
                    let row = pi * PANEL + r;
                    if row >= public.len() {
                        break;
                    }
                    let qz = quantize_row(public.row(row), &mut codes);
                    sc[r] = qz.scale;
                    bi[r] = 128 * codes.iter().map(|&c| i32::from(c)).sum::<i32>();
                    a_max = a_max.max(qz.approx_norm);
                    e_max = e_max.max(qz.residual_norm);
                    for (j, &c) in codes.iter().enumerate() {
                        panel[(j / 4) * 4 * PANEL + r * 4 + j % 4] = c;
                    }
                }
                (a_max, e_max)
            })
            .collect();
        let (max_approx_norm, max_residual_norm) = stats
            .iter()
            .fold((0.0f64, 0.0f64), |(a, e), s| (a.max(s.0), e.max(s.1)));
        Int8Screen {
            public,
            d4,
            panels,
            scale,
            bias,
            max_approx_norm,
            max_residual_norm,
        }
    }

    /// Candidate public indices for each query in `range`.
    pub(super) fn run(&self, queries: &EmbeddingMatrix, range: std::ops::Range<usize>, k: usize) -> Vec<Vec<u32>> {
        let d = self.public.dim();
        let d4 = self.d4;
        let nq = range.len();
        let groups = nq.div_ceil(MR);

        // Unsigned query codes (q_q + 128); padding dims and rows stay at 128,
        // which meets zero public codes.
        let mut codes = vec![128u8; groups * MR * d4 * 4];
        let mut q_scale = vec![0.0f32; groups * MR];
        let mut floors_init = vec![f32::INFINITY; groups * MR];
        let mut margins = vec![0.0f32; nq];
        let mut signed = vec![0i8; d];
        let u = f64::from(f32::EPSILON) / 2.0;
        for i in 0..nq {
            let qz = quantize_row(queries.row(range.start + i), &mut signed);
            for (dst, &c) in codes[i * d4 * 4..].iter_mut().zip(&signed) {
                *dst = (i16::from(c) + 128) as u8;
            }
            q_scale[i] = qz.scale;
            let (a_q, e_q) = (qz.approx_norm, qz.residual_norm);
            let (a_p, e_p) = (self.max_approx_norm, self.max_residual_norm);
            let bound = a_q * e_p + e_q * a_p + e_q * e_p + 4.0 * u * a_q * a_p;
            margins[i] = (2.0 * bound * 1.001 + 1e-6) as f32;
            floors_init[i] = f32::NEG_INFINITY;
        }
        let dwords: Vec<i32> = codes
            .chunks_exact(4)
            .map(|b| i32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();

        let mut pools: Vec<Pool> = (0..nq)
            .map(|_| Pool {
                threshold: f32::NEG_INFINITY,
                items: Vec::new(),
            })
            .collect();
        let prune_at = (4 * k).max(256);
        let n_public = self.public.len();
        let panel_bytes = d4 * 4 * PANEL;
        let mut floors = floors_init;
        let mut hits: [Vec<(f32, u32)>; MR] = Default::default();

        for (pi, panel) in self.panels.chunks_exact(panel_bytes).enumerate() {
            let base = pi * PANEL;
            let valid = (n_public - base).min(PANEL);
            let mask = if valid == PANEL { u32::MAX } else { (1u32 << valid) - 1 };
            for g in 0..groups {
                let q0 = g * MR;
                // SAFETY: `available()` was checked by the caller; all slices
                // have the sizes the kernel reads.
                unsafe {
                    panel_kernel(
                        &dwords[q0 * d4..(q0 + MR) * d4],
                        d4,
                        panel,
                        &self.bias[base..base + PANEL],
                        &self.scale[base..base + PANEL],
                        &q_scale[q0..q0 + MR],
                        &floors[q0..q0 + MR],
                        mask,
                        base as u32,
                        &mut hits,
                    );
                }
                for (r, h) in hits.iter_mut().enumerate() {
                    let qi = q0 + r;
                    if h.is_empty() || qi >= nq {
                        h.clear();
                        continue;
                    }
                    let pool = &mut pools[qi];
                    pool.items.append(h);
                    if pool.items.len() > prune_at {
                        pool.prune(k, margins[qi]);
                        floors[qi] = pool.threshold - margins[qi];
                    }
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

/// Scores [`MR`] queries against one panel and appends every valid row whose
/// approximate score reaches the query's floor to `hits[r]`.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f,avx512bw,avx512vnni")]
#[allow(clippy::too_many_arguments)]
unsafe fn panel_kernel(
    q: &[i32],
    d4: usize,
    panel: &[i8],
    bias: &[i32],
    scale: &[f32],
    q_scale: &[f32],
    floors: &[f32],
    valid: u32,
    base: u32,
    hits: &mut [Vec<(f32, u32)>; MR],
) {
    let mut acc = [[_mm512_setzero_si512(); 2]; MR];
    let qp = q.as_ptr();
    let pp = panel.as_ptr();
    for t in 0..d4 {
        let b0 = _mm512_loadu_si512(pp.add(t * 128) as *const _);
        let b1 = _mm512_loadu_si512(pp.add(t * 128 + 64) as *const _);
        for (r, a) in acc.iter_mut().enumerate() {
            let qv = _mm512_set1_epi32(*qp.add(r * d4 + t));
            a[0] = _mm512_dpbusd_epi32(a[0], qv, b0);
            a[1] = _mm512_dpbusd_epi32(a[1], qv, b1);
        }
    }
    let bias = [
        _mm512_loadu_si512(bias.as_ptr() as *const _),
        _mm512_loadu_si512(bias.as_ptr().add(16) as *const _),
    ];
    let scale = [_mm512_loadu_ps(scale.as_ptr()), _mm512_loadu_ps(scale.as_ptr().add(16))];
    let valid = [(valid & 0xffff) as u16, (valid >> 16) as u16];
    for (r, a) in acc.iter().enumerate() {
        let floor = _mm512_set1_ps(floors[r]);
        let sq = _mm512_set1_ps(q_scale[r]);
        for h in 0..2 {
            let ints = _mm512_sub_epi32(a[h], bias[h]);
            let s = _mm512_mul_ps(_mm512_mul_ps(_mm512_cvtepi32_ps(ints), scale[h]), sq);
            let mut m = _mm512_mask_cmp_ps_mask::<_CMP_GE_OQ>(valid[h], s, floor);
            if m != 0 {
                let mut vals = [0.0f32; 16];
                _mm512_storeu_ps(vals.as_mut_ptr(), s);
                while m != 0 {
                    let j = m.trailing_zeros() as usize;
                    hits[r].push((vals[j], base + (h * 16 + j) as u32));
                    m &= m - 1;
                }
            }
        }
    }
}

#[cfg(not(target_arch = "x86_64"))]
#[allow(clippy::too_many_arguments)]
unsafe fn panel_kernel(
    _: &[i32],
    _: usize,
    _: &[i8],
    _: &[i32],
    _: &[f32],
    _: &[f32],
    _: &[f32],
    _: u32,
    _: u32,
    _: &mut [Vec<(f32, u32)>; MR],
) {
    unreachable!("int8 screen requires x86_64 with AVX-512 VNNI")
}
