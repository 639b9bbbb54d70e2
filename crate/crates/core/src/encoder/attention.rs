//! Arrow attention: position 0 (`[CLS]`) attends to and is attended by every
//! position; all other pairs are limited to `|q - k| <= w`.

use crate::error::{Error, Result};
use crate::numerics::{Backward, Graph, Scalar, Tensor, Var};
use crate::oracles::counters;

/// Arrow-shaped attention pattern over `len` positions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    pub len: usize,
    pub window: usize,
}

impl AttentionMask {
    pub fn allowed(&self, q: usize, k: usize) -> bool {
        q == 0 || k == 0 || q.abs_diff(k) <= self.window
    }

    /// Keys visible from query `q`, ascending.
    pub fn keys(&self, q: usize) -> impl Iterator<Item = usize> {
        let (lo, hi) = if q == 0 {
            (0, self.len - 1)
        } else {
            (q.saturating_sub(self.window), (q + self.window).min(self.len - 1))
        };
        let cls = (lo > 0).then_some(0);
        cls.into_iter().chain(lo..=hi)
    }

    pub fn count_allowed(&self) -> usize {
        (0..self.len).map(|q| self.keys(q).count()).sum()
    }

    pub fn to_dense(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.len * self.len);
        for q in 0..self.len {
            for k in 0..self.len {
                out.push(self.allowed(q, k));
            }
        }
        out
    }
}

pub fn build_arrow_mask(len: usize, window: usize) -> AttentionMask {
    assert!(len >= 1, "attention mask needs at least one position");
    AttentionMask { len, window }
}

/// `ln(len) / ln(base)`. Lengths below 2 are clamped to 2.
pub fn logn_factor(len: usize, base: Scalar) -> Scalar {
    let len = if len < 2 {
        log::warn!("logn_factor: length {len} < 2 clamped to 2");
        2
    } else {
        len
    };
    (len as Scalar).ln() / base.ln()
}

struct ArrowAttentionOp {
    mask: AttentionMask,
    heads: usize,
    /// Softmax weights, head-major, following `mask.keys(q)` order per row.
    probs: Vec<Scalar>,
    row_offsets: Vec<usize>,
    row_scale: Scalar,
    cls_scale: Scalar,
}

impl ArrowAttentionOp {
    fn scale(&self, q: usize) -> Scalar {
        if q == 0 {
            self.cls_scale
        } else {
            self.row_scale
        }
    }
}

impl Backward for ArrowAttentionOp {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, gout: &[Scalar], grad_in: &mut [Option<Vec<Scalar>>]) {
        let (q_t, k_t, v_t) = (inputs[0].data(), inputs[1].data(), inputs[2].data());
        let len = self.mask.len;
        let d = inputs[0].shape()[1];
        let dh = d / self.heads;
        let per_head = self.row_offsets[len];
        let mut gq = vec![0.0; len * d];
        let mut gk = vec![0.0; len * d];
        let mut gv = vec![0.0; len * d];
        let mut dp = Vec::new();
        for h in 0..self.heads {
            let c0 = h * dh;
            for q in 0..len {
                let probs = &self.probs[h * per_head + self.row_offsets[q]..h * per_head + self.row_offsets[q + 1]];
                let go = &gout[q * d + c0..q * d + c0 + dh];
                dp.clear();
                for (&p, k) in probs.iter().zip(self.mask.keys(q)) {
                    let vk = &v_t[k * d + c0..k * d + c0 + dh];
                    let gvk = &mut gv[k * d + c0..k * d + c0 + dh];
                    let mut dot = 0.0;
                    for c in 0..dh {
                        gvk[c] += p * go[c];
                        dot += go[c] * vk[c];
                    }
                    dp.push(dot);
                }
                let mean: Scalar = probs.iter().zip(&dp).map(|(p, g)| p * g).sum();
                let s = self.scale(q);
                let qrow = &q_t[q * d + c0..q * d + c0 + dh];
                for ((&p, &g), k) in probs.iter().zip(&dp).zip(self.mask.keys(q)) {
                    let ds = p * (g - mean) * s;
                    if ds == 0.0 {
                        continue;
                    }
                    let krow = &k_t[k * d + c0..k * d + c0 + dh];
                    for c in 0..dh {
                        gq[q * d + c0 + c] += ds * krow[c];
                        gk[k * d + c0 + c] += ds * qrow[c];
                    }
                }
            }
        }
        for (slot, g) in grad_in.iter_mut().zip([gq, gk, gv]) {
            if let Some(acc) = slot.as_mut() {
                acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            }
        }
    }
}

impl Graph {
    /// Multi-head attention under the arrow mask. `q`, `k`, `v` are `[L, d]`
    /// with heads laid out as contiguous column blocks. Row 0 uses
    /// `cls_scale`, all other rows `row_scale`.
    pub fn arrow_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        window: usize,
        row_scale: Scalar,
        cls_scale: Scalar,
    ) -> Result<Var> {
        let shape = self.shape(q).to_vec();
        if shape.len() != 2 || self.shape(k) != shape.as_slice() || self.shape(v) != shape.as_slice() || shape[1] % heads != 0 {
            return Err(Error::Shape {
                op: "arrow_attention",
                lhs: shape,
                rhs: self.shape(k).to_vec(),
            });
        }
        let (len, d) = (shape[0], shape[1]);
        let dh = d / heads;
        let mask = build_arrow_mask(len, window);
        let mut row_offsets = Vec::with_capacity(len + 1);
        row_offsets.push(0);
        for qi in 0..len {
            row_offsets.push(row_offsets[qi] + mask.keys(qi).count());
        }
        let per_head = row_offsets[len];
        counters::add_encoder_pairs((per_head * heads) as u64);

        let (qt, kt, vt) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![0.0; per_head * heads];
        let mut out = vec![0.0; len * d];
        for h in 0..heads {
            let c0 = h * dh;
            for qi in 0..len {
                let scale = if qi == 0 { cls_scale } else { row_scale };
                let row = &mut probs[h * per_head + row_offsets[qi]..h * per_head + row_offsets[qi + 1]];
                let qrow = &qt[qi * d + c0..qi * d + c0 + dh];
                let mut max = Scalar::NEG_INFINITY;
                for (p, ki) in row.iter_mut().zip(mask.keys(qi)) {
                    let krow = &kt[ki * d + c0..ki * d + c0 + dh];
                    let s: Scalar = qrow.iter().zip(krow).map(|(a, b)| a * b).sum::<Scalar>() * scale;
                    *p = s;
                    max = max.max(s);
                }
                let mut z = 0.0;
                for p in row.iter_mut() {
                    *p = (*p - max).exp();
                    z += *p;
                }
                let o = &mut out[qi * d + c0..qi * d + c0 + dh];
                for (p, ki) in row.iter_mut().zip(mask.keys(qi)) {
                    *p /= z;
                    let vrow = &vt[ki * d + c0..ki * d + c0 + dh];
                    for c in 0..dh {
                        o[c] += *p * vrow[c];
                    }
                }
            }
        }
        let out = Tensor::new(&[len, d], out)?;
        Ok(self.push(
            out,
            vec![q, k, v],
            ArrowAttentionOp {
                mask,
                heads,
                probs,
                row_offsets,
                row_scale,
                cls_scale,
            },
        ))
    }
}
