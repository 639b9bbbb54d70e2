//! Dense reference implementations: full-attention encoder, square
//! Biaffine, band recovery, square plus-shaped attention blocks and the
//! complete square pipeline. Forward only; sizes are capped.

use super::counters;
use crate::bispa::{rope_rotate, BispaBlock, Conv3x3};
use crate::encoder::{logn_factor, Encoder};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::{LayerNorm, Linear, Mlp, LN_EPS};
use crate::numerics::ops::gelu_scalar;
use crate::numerics::{Graph, ParamStore, Scalar, Tensor, Var};
use crate::span::{BandGeometry, BandTensor};

pub const DEFAULT_DENSE_CAP: usize = 64;

fn check_cap(len: usize, cap: usize) -> Result<()> {
    if len > cap {
        return Err(Error::OracleCap { len, cap });
    }
    Ok(())
}

/// Full (unmasked) multi-head attention written with generic graph ops.
pub fn full_attention(g: &mut Graph, q: Var, k: Var, v: Var, heads: usize, row_scale: Scalar, cls_scale: Scalar) -> Result<Var> {
    let (l, d) = (g.shape(q)[0], g.shape(q)[1]);
    let dh = d / heads;
    let split = |g: &mut Graph, x: Var| -> Result<Var> {
        let x = g.reshape(x, &[l, heads, dh])?;
        g.permute(x, &[1, 0, 2])
    };
    let (qh, kh, vh) = (split(g, q)?, split(g, k)?, split(g, v)?);
    let kt = g.transpose(kh)?;
    let s = g.matmul(qh, kt)?;
    let mut scales = Tensor::full(&[heads, l, l], row_scale);
    for h in 0..heads {
        for key in 0..l {
            scales.set(&[h, 0, key], cls_scale);
        }
    }
    let s = g.mul_const(s, &scales)?;
    let p = g.masked_softmax(s, &vec![true; heads * l * l])?;
    counters::add_encoder_pairs((heads * l * l) as u64);
    let o = g.matmul(p, vh)?;
    let o = g.permute(o, &[1, 0, 2])?;
    g.reshape(o, &[l, d])
}

/// The encoder with full attention and the given `[CLS]` logit factor,
/// sharing all weights with `encoder`. The cap bounds the content tokens
/// after `[CLS]`.
pub fn dense_encoder(encoder: &Encoder, store: &ParamStore, ids: &[usize], cls_factor: Scalar, cap: usize) -> Result<Tensor> {
    check_cap(ids.len().saturating_sub(1), cap)?;
    let heads = encoder.config.heads;
    let row_scale = encoder.row_scale();
    let cls_scale = cls_factor * row_scale;
    let mut g = Graph::new();
    let attn = move |g: &mut Graph, q: Var, k: Var, v: Var| full_attention(g, q, k, v, heads, row_scale, cls_scale);
    let h = encoder.forward_with(&mut g, store, ids, &attn)?;
    Ok(g.take_value(h))
}

/// Square Biaffine tensor `[L, L, c]` by direct summation.
pub fn biaffine_dense(hs: &Tensor, he: &Tensor, w1: &Tensor, w2: &Tensor, b: &Tensor, cap: usize) -> Result<Tensor> {
    let (len, d) = (hs.shape()[0], hs.shape()[1]);
    check_cap(len, cap)?;
    let c = w1.shape()[1];
    let (hs, he, w1, w2, b) = (hs.data(), he.data(), w1.data(), w2.data(), b.data());
    // inner[j, r, p] = sum_q W1[p, r, q] he[j, q]
    let mut inner = vec![0.0; len * c * d];
    for j in 0..len {
        for r in 0..c {
            for p in 0..d {
                inner[(j * c + r) * d + p] = (0..d).map(|q| w1[(p * c + r) * d + q] * he[j * d + q]).sum();
            }
        }
    }
    let mut out = vec![0.0; len * len * c];
    for i in 0..len {
        for j in 0..len {
            for r in 0..c {
                let mut s = b[r];
                for p in 0..d {
                    s += hs[i * d + p] * inner[(j * c + r) * d + p];
                    s += w2[r * 2 * d + p] * hs[i * d + p] + w2[r * 2 * d + d + p] * he[j * d + p];
                }
                out[(i * len + j) * c + r] = s;
            }
        }
    }
    Tensor::new(&[len, len, c], out)
}

/// Band to square, zeros outside the band.
pub fn recover(band: &BandTensor) -> Tensor {
    let (len, c, w) = (band.geom.len, band.channels, band.geom.width());
    let mut out = Tensor::zeros(&[len, len, c]);
    for i in 0..len {
        for k in 0..w {
            if let Some(j) = band.geom.column(i, k) {
                out.data_mut()[(i * len + j) * c..(i * len + j + 1) * c].copy_from_slice(band.slot(i, k));
            }
        }
    }
    out
}

fn in_band(i: usize, j: usize, m: usize) -> bool {
    i.abs_diff(j) <= m
}

fn affine_rows(x: &[Scalar], fan_in: usize, w: &Tensor, b: &Tensor) -> Vec<Scalar> {
    let fan_out = w.shape()[1];
    let mut out = Vec::with_capacity(x.len() / fan_in * fan_out);
    for row in x.chunks_exact(fan_in) {
        for o in 0..fan_out {
            let mut s = b.data()[o];
            for (i, &v) in row.iter().enumerate() {
                s += v * w.data()[i * fan_out + o];
            }
            out.push(s);
        }
    }
    out
}

fn linear_rows(store: &ParamStore, lin: &Linear, x: &[Scalar]) -> Vec<Scalar> {
    let w = store.tensor(lin.weight);
    affine_rows(x, w.shape()[0], w, store.tensor(lin.bias))
}

fn mlp_rows(store: &ParamStore, mlp: &Mlp, x: &[Scalar]) -> Vec<Scalar> {
    let h: Vec<Scalar> = linear_rows(store, &mlp.hidden, x).into_iter().map(gelu_scalar).collect();
    linear_rows(store, &mlp.out, &h)
}

fn layer_norm_rows(store: &ParamStore, ln: &LayerNorm, x: &[Scalar]) -> Vec<Scalar> {
    let (g, b) = (store.tensor(ln.gamma).data(), store.tensor(ln.beta).data());
    let n = g.len();
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks_exact(n) {
        let mean = row.iter().sum::<Scalar>() / n as Scalar;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<Scalar>() / n as Scalar;
        let s = 1.0 / (var + LN_EPS).sqrt();
        out.extend(row.iter().zip(g).zip(b).map(|((v, g), b)| (v - mean) * s * g + b));
    }
    out
}

/// Square layout `[L, L, c]` with every cell outside the band zeroed.
struct Square {
    len: usize,
    c: usize,
    m: usize,
    data: Vec<Scalar>,
}

impl Square {
    fn cell(&self, i: usize, j: usize) -> &[Scalar] {
        let o = (i * self.len + j) * self.c;
        &self.data[o..o + self.c]
    }

    fn masked(mut self) -> Self {
        for i in 0..self.len {
            for j in 0..self.len {
                if !in_band(i, j, self.m) {
                    let o = (i * self.len + j) * self.c;
                    self.data[o..o + self.c].iter_mut().for_each(|v| *v = 0.0);
                }
            }
        }
        self
    }

    fn with(&self, data: Vec<Scalar>) -> Self {
        Self {
            len: self.len,
            c: data.len() / (self.len * self.len),
            m: self.m,
            data,
        }
        .masked()
    }
}

/// Single-head attention over the in-band cells of each matrix row
/// (`vertical = false`) or column (`vertical = true`), rotary positions at
/// the varying index. With `m >= L - 1` this is full plus-shaped attention.
pub fn dense_axis_attention(
    store: &ParamStore,
    block: &BispaBlock,
    x: &Tensor,
    m: usize,
    rope_base: Scalar,
    vertical: bool,
) -> Result<Tensor> {
    let (len, c) = (x.shape()[0], x.shape()[2]);
    let proj = if vertical { &block.vertical } else { &block.horizontal };
    let cells = len * len;
    let rows = |lin: &Linear| linear_rows(store, lin, x.data());
    let positions: Vec<usize> = (0..cells).map(|s| if vertical { s / len } else { s % len }).collect();
    let q = rope_rotate(&Tensor::new(&[cells, c], rows(&proj.q))?, &positions, rope_base)?;
    let k = rope_rotate(&Tensor::new(&[cells, c], rows(&proj.k))?, &positions, rope_base)?;
    let v = rows(&proj.v);
    let scale = 1.0 / (c as Scalar).sqrt();
    let mut out = vec![0.0; cells * c];
    let mut pairs = 0u64;
    for i in 0..len {
        for j in 0..len {
            if !in_band(i, j, m) {
                continue;
            }
            let keys: Vec<usize> = (0..len)
                .filter_map(|t| {
                    let (a, b) = if vertical { (t, j) } else { (i, t) };
                    in_band(a, b, m).then_some(a * len + b)
                })
                .collect();
            pairs += keys.len() as u64;
            let qv = &q.data()[(i * len + j) * c..(i * len + j + 1) * c];
            let scores: Vec<Scalar> = keys
                .iter()
                .map(|&s| qv.iter().zip(&k.data()[s * c..(s + 1) * c]).map(|(a, b)| a * b).sum::<Scalar>() * scale)
                .collect();
            let max = scores.iter().copied().fold(Scalar::NEG_INFINITY, Scalar::max);
            let e: Vec<Scalar> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: Scalar = e.iter().sum();
            let o = &mut out[(i * len + j) * c..(i * len + j + 1) * c];
            for (&s, p) in keys.iter().zip(&e) {
                for t in 0..c {
                    o[t] += p / z * v[s * c + t];
                }
            }
        }
    }
    counters::add_span_pairs(pairs);
    Tensor::new(&[len, len, c], out)
}

/// 3x3 convolution whose taps follow the band grid: tap `(dy, dx)` of cell
/// `(i, j)` reads cell `(i + dy, j + dy + dx)`.
fn sheared_conv(store: &ParamStore, conv: &Conv3x3, x: &Square) -> Vec<Scalar> {
    let (k, b) = (store.tensor(conv.kernel).data(), store.tensor(conv.bias).data());
    let (len, c) = (x.len, x.c);
    let mut out = vec![0.0; len * len * c];
    for i in 0..len {
        for j in 0..len {
            if !in_band(i, j, x.m) {
                continue;
            }
            let o = &mut out[(i * len + j) * c..(i * len + j + 1) * c];
            o.copy_from_slice(b);
            for dy in 0..3 {
                for dx in 0..3 {
                    let si = i as isize + dy as isize - 1;
                    let sj = j as isize + dy as isize - 1 + dx as isize - 1;
                    if si < 0 || sj < 0 || si as usize >= len || sj as usize >= len || !in_band(si as usize, sj as usize, x.m) {
                        continue;
                    }
                    let src = x.cell(si as usize, sj as usize);
                    for co in 0..c {
                        for ci in 0..c {
                            o[co] += k[((co * c + ci) * 3 + dy) * 3 + dx] * src[ci];
                        }
                    }
                }
            }
        }
    }
    out
}

/// One band-attention block evaluated on the square layout.
pub fn dense_block(store: &ParamStore, block: &BispaBlock, x: &Tensor, m: usize, rope_base: Scalar) -> Result<Tensor> {
    let (len, c) = (x.shape()[0], x.shape()[2]);
    let sq = Square {
        len,
        c,
        m,
        data: x.data().to_vec(),
    }
    .masked();
    let table = store.tensor(block.matrix_pos).data();
    let mut p = sq.data.clone();
    for i in 0..len {
        for j in 0..len {
            let row = if i <= j { 0 } else { 1 };
            let o = (i * len + j) * c;
            for t in 0..c {
                p[o + t] += table[row * c + t];
            }
        }
    }
    let p = Tensor::new(&[len, len, c], sq.with(p).data)?;
    let zh = dense_axis_attention(store, block, &p, m, rope_base, false)?;
    let zv = dense_axis_attention(store, block, &p, m, rope_base, true)?;
    let mut cat = Vec::with_capacity(len * len * 2 * c);
    for (a, b) in zh.data().chunks_exact(c).zip(zv.data().chunks_exact(c)) {
        cat.extend_from_slice(a);
        cat.extend_from_slice(b);
    }
    let f = sq.with(mlp_rows(store, &block.fuse, &cat));
    let sum: Vec<Scalar> = sq.data.iter().zip(&f.data).map(|(a, b)| a + b).collect();
    let s1 = sq.with(layer_norm_rows(store, &block.ln_attn, &sum));
    let c1 = sq.with(sheared_conv(store, &block.conv1, &s1));
    let c1 = sq.with(c1.data.into_iter().map(gelu_scalar).collect());
    let c2 = sq.with(sheared_conv(store, &block.conv2, &c1));
    let sum: Vec<Scalar> = s1.data.iter().zip(&c2.data).map(|(a, b)| a + b).collect();
    let out = sq.with(layer_norm_rows(store, &block.ln_conv, &sum));
    Tensor::new(&[len, len, c], out.data)
}

/// Span stage on the square layout: Biaffine restricted to the band, then
/// every band-attention block. Returns `(S, S'')`.
pub fn dense_span_stage(model: &Model, store: &ParamStore, hs: &Tensor, he: &Tensor, cap: usize) -> Result<(Tensor, Tensor)> {
    let sp = &model.span;
    let s = biaffine_dense(hs, he, store.tensor(sp.w1), store.tensor(sp.w2), store.tensor(sp.b), cap)?;
    let (n, c, m) = (s.shape()[0], s.shape()[2], model.m());
    let s = Tensor::new(
        &[n, n, c],
        Square {
            len: n,
            c,
            m,
            data: s.into_data(),
        }
        .masked()
        .data,
    )?;
    let mut x = s.clone();
    for block in &model.bispa.blocks {
        x = dense_block(store, block, &x, m, model.bispa.config.rope_base)?;
    }
    Ok((s, x))
}

/// Square logits `[n, n, R]` for `ids = [CLS] t_1 .. t_n`: full-attention
/// encoder, square Biaffine restricted to the band, square band-attention
/// blocks and the output head.
pub fn dense_pipeline(model: &Model, store: &ParamStore, ids: &[usize], cap: usize) -> Result<Tensor> {
    let factor = logn_factor(ids.len(), model.config.encoder.logn_base);
    let h = dense_encoder(&model.encoder, store, ids, factor, cap)?;
    let (n, d) = (ids.len() - 1, model.config.encoder.d);
    let content = &h.data()[d..];
    let hs = Tensor::new(&[n, d], mlp_rows(store, &model.span.start, content))?;
    let he = Tensor::new(&[n, d], mlp_rows(store, &model.span.end, content))?;
    let (s, x) = dense_span_stage(model, store, &hs, &he, cap)?;
    let sum: Vec<Scalar> = x.data().iter().zip(s.data()).map(|(a, b)| a + b).collect();
    let y = mlp_rows(store, &model.head, &sum);
    Tensor::new(&[n, n, model.num_types()], y)
}

/// Band extraction of the square logits, for comparison with the banded
/// pipeline.
pub fn band_of(square: &Tensor, m: usize) -> Result<BandTensor> {
    BandTensor::from_dense(square, m)
}

/// Geometry helper for callers comparing band slots and square cells.
pub fn band_cells(len: usize, m: usize) -> impl Iterator<Item = (usize, usize, usize)> {
    let geom = BandGeometry::new(len, m);
    (0..len).flat_map(move |i| (0..geom.width()).filter_map(move |k| geom.column(i, k).map(|j| (i, k, j))))
}
