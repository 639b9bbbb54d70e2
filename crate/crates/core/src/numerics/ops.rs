//! Differentiable operations recorded on a [`Graph`].

use super::gemm::gemm;
use super::graph::{Backward, Graph, Var};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

fn accumulate(dst: &mut Option<Vec<Scalar>>, f: impl FnOnce(&mut [Scalar])) {
    if let Some(g) = dst.as_mut() {
        f(g);
    }
}

// ---------------------------------------------------------------------------
// Elementwise

struct AddOp;
impl Backward for AddOp {
    fn backward(&self, _: &[&Tensor], _: &Tensor, gout: &[Scalar], grad_in: &mut [Option<Vec<Scalar>>]) {
        for g in grad_in.iter_mut() {
            accumulate(g, |g| g.iter_mut().zip(gout).for_each(|(a, b)| *a += b));
        }
    }
}

struct MulOp;
impl Backward for MulOp {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, gout: &[Scalar], grad_in: &mut [Option<Vec<Scalar>>]) {
        let (a, b) = (inputs[0].data(), inputs[1].data());
        accumulate(&mut grad_in[0], |g| {
            for ((g, go), y) in g.iter_mut().zip(gout).zip(b) {
                *g += go * y;
            }
        });
        accumulate(&mut grad_in[1], |g| {
            for ((g, go), x) in g.iter_mut().zip(gout).zip(a) {
                *g += go * x;
            }
        });
    }
}

struct ScaleOp(Scalar);
impl Backward for ScaleOp {
    fn backward(&self, _: &[&Tensor], _: &Tensor, gout: &[Scalar], grad_in: &mut [Option<Vec<Scalar>>]) {
        accumulate(&mut grad_in[0], |g| g.iter_mut().zip(gout).for_each(|(a, b)| *a += self.0 * b));
    }
}

/// Multiplies by a constant tensor of the same shape.
struct MulConstOp(Vec<Scalar>);
impl Backward for MulConstOp {
    fn backward(&self, _: &[&Tensor], _: &Tensor, gout: &[Scalar], grad_in: &mut [Option<Vec<Scalar>>]) {
        accumulate(&mut grad_in[0], |g| {
            for ((g, go), c) in g.iter_mut().zip(gout).zip(&self.0) {
                *g += go * c;
            }
        });
    }
}

struct AddBiasOp;
impl Backward for AddBiasOp {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, gout: &[Scalar], grad_in: &mut [Option<Vec<Scalar>>]) {
        let n = inputs[1].numel();
        accumulate(&mut grad_in[0], |g| g.iter_mut().zip(gout).for_each(|(a, b)| *a += b));
        accumulate(&mut grad_in[1], |g| {
            for row in gout.chunks_exact(n) {
                g.iter_mut().zip(row).for_each(|(a, b)| *a += b);
            }
        });
    }
}

const GELU_C: Scalar = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: Scalar = 0.044_715;

pub fn gelu_scalar(x: Scalar) -> Scalar {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad_scalar(x: Scalar) -> Scalar {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

struct GeluOp;
impl Backward for GeluOp {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, gout: &[Scalar], grad_in: &mut [Option<Vec<Scalar>>]) {
        let x = inputs[0].data();
        accumulate(&mut grad_in[0], |g| {
            for ((g, go), &x) in g.iter_mut().zip(gout).zip(x) {
                *g += go * gelu_grad_scalar(x);
            }
        });
    }
}

pub fn sigmoid_scalar(x: Scalar) -> Scalar {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct SigmoidOp;
impl Backward for SigmoidOp {
    fn backward(&self, _: &[&Tensor], out: &Tensor, gout: &[Scalar], grad_in: &mut [Option<Vec<Scalar>>]) {
        accumulate(&mut grad_in[0], |g| {
            for ((g, go), s) in g.iter_mut().zip(gout).zip(out.data()) {
                *g += go * s * (1.0 - s);
            }
        });
    }
}

struct SumOp;
impl Backward for SumOp {
    fn backward(&self, _: &[&Tensor], _: &Tensor, gout: &[Scalar], grad_in: &mut [Option<Vec<Scalar>>]) {
        accumulate(&mut grad_in[0], |g| g.iter_mut().for_each(|a| *a += gout[0]));
    }
}

// ---------------------------------------------------------------------------
// Matrix product with batch broadcast

struct MatMulOp {
    m: usize,
    k: usize,
    n: usize,
    /// (a offset, b offset) per output batch element.
    pairs: Vec<(usize, usize)>,
}

impl Backward for MatMulOp {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, gout: &[Scalar], grad_in: &mut [Option<Vec<Scalar>>]) {
        let (m, k, n) = (self.m, self.k, self.n);
        let (a, b) = (inputs[0].data(), inputs[1].data());
        let (ga, gb) = grad_in.split_at_mut(1);
        for (bi, &(ao, bo)) in self.pairs.iter().enumerate() {
            let go = &gout[bi * m * n..(bi + 1) * m * n];
            if let Some(ga) = ga[0].as_mut() {
                // dA = dC * B^T
                gemm(false, true, m, k, n, 1.0, go, n, &b[bo..], n, 1.0, &mut ga[ao..], k);
            }
            if let Some(gb) = gb[0].as_mut() {
                // dB = A^T * dC
                gemm(true, false, k, n, m, 1.0, &a[ao..], k, go, n, 1.0, &mut gb[bo..], n);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Layout

struct ReshapeOp;
impl Backward for ReshapeOp {
    fn backward(&self, _: &[&Tensor], _: &Tensor, gout: &[Scalar], grad_in: &mut [Option<Vec<Scalar>>]) {
        accumulate(&mut grad_in[0], |g| g.iter_mut().zip(gout).for_each(|(a, b)| *a += b));
    }
}

/// `out[i] = in[src[i]]`, or zero when `src[i]` is `None`.
struct GatherOp {
    src: Vec<Option<usize>>,
    width: usize,
}
impl Backward for GatherOp {
    fn backward(&self, _: &[&Tensor], _: &Tensor, gout: &[Scalar], grad_in: &mut [Option<Vec<Scalar>>]) {
        let w = self.width;
        accumulate(&mut grad_in[0], |g| {
            for (o, s) in self.src.iter().enumerate() {
                if let Some(s) = *s {
                    for c in 0..w {
                        g[s * w + c] += gout[o * w + c];
                    }
                }
            }
        });
    }
}

struct ConcatLastOp {
    widths: Vec<usize>,
}
impl Backward for ConcatLastOp {
    fn backward(&self, _: &[&Tensor], _: &Tensor, gout: &[Scalar], grad_in: &mut [Option<Vec<Scalar>>]) {
        let total: usize = self.widths.iter().sum();
        let rows = gout.len() / total;
        let mut off = 0;
        for (k, &w) in self.widths.iter().enumerate() {
            accumulate(&mut grad_in[k], |g| {
                for r in 0..rows {
                    for c in 0..w {
                        g[r * w + c] += gout[r * total + off + c];
                    }
                }
            });
            off += w;
        }
    }
}

// ---------------------------------------------------------------------------
// Normalization / attention primitives

struct LayerNormOp {
    n: usize,
    /// Normalized input.
    xhat: Vec<Scalar>,
    inv_std: Vec<Scalar>,
}
impl Backward for LayerNormOp {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, gout: &[Scalar], grad_in: &mut [Option<Vec<Scalar>>]) {
        let n = self.n;
        let gamma = inputs[1].data();
        let (gx, rest) = grad_in.split_at_mut(1);
        let (gg, gb) = rest.split_at_mut(1);
        for (r, go) in gout.chunks_exact(n).enumerate() {
            let xh = &self.xhat[r * n..(r + 1) * n];
            if let Some(gg) = gg[0].as_mut() {
                for c in 0..n {
                    gg[c] += go[c] * xh[c];
                }
            }
            if let Some(gb) = gb[0].as_mut() {
                for c in 0..n {
                    gb[c] += go[c];
                }
            }
            if let Some(gx) = gx[0].as_mut() {
                let mut mean_g = 0.0;
                let mut mean_gx = 0.0;
                for c in 0..n {
                    let g = go[c] * gamma[c];
                    mean_g += g;
                    mean_gx += g * xh[c];
                }
                mean_g /= n as Scalar;
                mean_gx /= n as Scalar;
                let s = self.inv_std[r];
                let row = &mut gx[r * n..(r + 1) * n];
                for c in 0..n {
                    let g = go[c] * gamma[c];
                    row[c] += s * (g - mean_g - xh[c] * mean_gx);
                }
            }
        }
    }
}

struct MaskedSoftmaxOp {
    n: usize,
}
impl Backward for MaskedSoftmaxOp {
    fn backward(&self, _: &[&Tensor], out: &Tensor, gout: &[Scalar], grad_in: &mut [Option<Vec<Scalar>>]) {
        let n = self.n;
        accumulate(&mut grad_in[0], |g| {
            for ((p, go), g) in out.data().chunks_exact(n).zip(gout.chunks_exact(n)).zip(g.chunks_exact_mut(n)) {
                let dot: Scalar = p.iter().zip(go).map(|(p, g)| p * g).sum();
                for c in 0..n {
                    g[c] += p[c] * (go[c] - dot);
                }
            }
        });
    }
}

struct BceOp {
    targets: Vec<Scalar>,
    valid: Vec<bool>,
    count: usize,
}
impl Backward for BceOp {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, gout: &[Scalar], grad_in: &mut [Option<Vec<Scalar>>]) {
        let scale = gout[0] / self.count as Scalar;
        let x = inputs[0].data();
        accumulate(&mut grad_in[0], |g| {
            for i in 0..x.len() {
                if self.valid[i] {
                    g[i] += scale * (sigmoid_scalar(x[i]) - self.targets[i]);
                }
            }
        });
    }
}

struct EmbeddingOp {
    ids: Vec<usize>,
    d: usize,
}
impl Backward for EmbeddingOp {
    fn backward(&self, _: &[&Tensor], _: &Tensor, gout: &[Scalar], grad_in: &mut [Option<Vec<Scalar>>]) {
        let d = self.d;
        accumulate(&mut grad_in[0], |g| {
            for (r, &id) in self.ids.iter().enumerate() {
                for c in 0..d {
                    g[id * d + c] += gout[r * d + c];
                }
            }
        });
    }
}

/// Numerically stable `max(x,0) - x*y + ln(1 + e^{-|x|})`.
pub fn bce_logit_scalar(x: Scalar, y: Scalar) -> Scalar {
    x.max(0.0) - x * y + (-x.abs()).exp().ln_1p()
}

impl Graph {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("add", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::new(ta.shape(), data)?;
        Ok(self.push(out, vec![a, b], AddOp))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err("mul", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.shape(), data)?;
        Ok(self.push(out, vec![a, b], MulOp))
    }

    pub fn scale(&mut self, a: Var, s: Scalar) -> Var {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| x * s).collect();
        let out = Tensor::new(ta.shape(), data).unwrap();
        self.push(out, vec![a], ScaleOp(s))
    }

    /// Elementwise product with a constant of the same shape.
    pub fn mul_const(&mut self, a: Var, c: &Tensor) -> Result<Var> {
        let ta = self.value(a);
        if ta.shape() != c.shape() {
            return Err(shape_err("mul_const", ta.shape(), c.shape()));
        }
        let data = ta.data().iter().zip(c.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.shape(), data)?;
        Ok(self.push(out, vec![a], MulConstOp(c.data().to_vec())))
    }

    /// Zeroes whole rows (last-axis vectors) where `keep` is false.
    pub fn mask_rows(&mut self, a: Var, keep: &[bool]) -> Result<Var> {
        let ta = self.value(a);
        let n = ta.last_dim();
        if ta.numel() / n != keep.len() {
            return Err(shape_err("mask_rows", ta.shape(), &[keep.len()]));
        }
        let mut mask = Vec::with_capacity(ta.numel());
        for &k in keep {
            mask.extend(std::iter::repeat(if k { 1.0 } else { 0.0 }).take(n));
        }
        let c = Tensor::new(ta.shape(), mask)?;
        self.mul_const(a, &c)
    }

    /// `x[.., n] + b[n]`, broadcasting the bias over all leading axes.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        if tb.shape().len() != 1 || tx.last_dim() != tb.numel() {
            return Err(shape_err("add_bias", tx.shape(), tb.shape()));
        }
        let n = tb.numel();
        let mut data = tx.data().to_vec();
        for row in data.chunks_exact_mut(n) {
            row.iter_mut().zip(tb.data()).for_each(|(a, b)| *a += b);
        }
        let out = Tensor::new(tx.shape(), data)?;
        Ok(self.push(out, vec![x, b], AddBiasOp))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| gelu_scalar(v)).collect();
        let out = Tensor::new(tx.shape(), data).unwrap();
        self.push(out, vec![x], GeluOp)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| sigmoid_scalar(v)).collect();
        let out = Tensor::new(tx.shape(), data).unwrap();
        self.push(out, vec![x], SigmoidOp)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: Scalar = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), vec![x], SumOp)
    }

    /// `a[.., m, k] x b[.., k, n]`. Leading batch axes must agree or be 1
    /// (a missing axis counts as 1).
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (sa, sb) = (ta.shape(), tb.shape());
        if sa.len() < 2 || sb.len() < 2 || sa[sa.len() - 1] != sb[sb.len() - 2] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[sa.len() - 2], sa[sa.len() - 1], sb[sb.len() - 1]);
        let (ba, bb) = (&sa[..sa.len() - 2], &sb[..sb.len() - 2]);
        let rank = ba.len().max(bb.len());
        let pad = |s: &[usize]| -> Vec<usize> {
            let mut v = vec![1; rank - s.len()];
            v.extend_from_slice(s);
            v
        };
        let (pa, pb) = (pad(ba), pad(bb));
        let mut batch = Vec::with_capacity(rank);
        for (&x, &y) in pa.iter().zip(&pb) {
            if x != y && x != 1 && y != 1 {
                return Err(shape_err("matmul", sa, sb));
            }
            batch.push(x.max(y));
        }
        let nbatch: usize = batch.iter().product();
        let mut pairs = Vec::with_capacity(nbatch);
        let mut idx = vec![0usize; rank];
        for _ in 0..nbatch {
            let (mut oa, mut ob) = (0, 0);
            for d in 0..rank {
                oa = oa * pa[d] + if pa[d] == 1 { 0 } else { idx[d] };
                ob = ob * pb[d] + if pb[d] == 1 { 0 } else { idx[d] };
            }
            pairs.push((oa * m * k, ob * k * n));
            for d in (0..rank).rev() {
                idx[d] += 1;
                if idx[d] < batch[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        let mut out = vec![0.0; nbatch * m * n];
        for (bi, &(ao, bo)) in pairs.iter().enumerate() {
            gemm(
                false,
                false,
                m,
                n,
                k,
                1.0,
                &ta.data()[ao..],
                k,
                &tb.data()[bo..],
                n,
                0.0,
                &mut out[bi * m * n..],
                n,
            );
        }
        let mut shape = batch;
        shape.extend_from_slice(&[m, n]);
        let out = Tensor::new(&shape, out)?;
        Ok(self.push(out, vec![a, b], MatMulOp { m, k, n, pairs }))
    }

    /// `x W + b` over the last axis of `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_bias(y, b),
            None => Ok(y),
        }
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(out, vec![x], ReshapeOp))
    }

    /// General axis permutation: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        let shape = tx.shape();
        let rank = shape.len();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(shape_err("permute", shape, axes));
        }
        let mut in_strides = vec![1; rank];
        for d in (0..rank.saturating_sub(1)).rev() {
            in_strides[d] = in_strides[d + 1] * shape[d + 1];
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let numel = tx.numel();
        let mut src = Vec::with_capacity(numel);
        let mut idx = vec![0usize; rank];
        for _ in 0..numel {
            src.push(Some(idx.iter().zip(axes).map(|(&i, &a)| i * in_strides[a]).sum()));
            for d in (0..rank).rev() {
                idx[d] += 1;
                if idx[d] < out_shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        self.gather_rows_shaped(x, src, 1, &out_shape)
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let rank = self.shape(x).len();
        if rank < 2 {
            return Err(shape_err("transpose", self.shape(x), &[]));
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(rank - 1, rank - 2);
        self.permute(x, &axes)
    }

    /// Gathers `width`-wide rows: output row `i` is input row `src[i]`, or
    /// zeros for `None`.
    pub fn gather_rows_shaped(&mut self, x: Var, src: Vec<Option<usize>>, width: usize, shape: &[usize]) -> Result<Var> {
        let tx = self.value(x);
        let rows_in = tx.numel() / width;
        if src.iter().flatten().any(|&s| s >= rows_in) || src.len() * width != shape.iter().product::<usize>() {
            return Err(shape_err("gather_rows", tx.shape(), shape));
        }
        let mut data = vec![0.0; src.len() * width];
        for (o, s) in src.iter().enumerate() {
            if let Some(s) = *s {
                data[o * width..(o + 1) * width].copy_from_slice(&tx.data()[s * width..(s + 1) * width]);
            }
        }
        let out = Tensor::new(shape, data)?;
        Ok(self.push(out, vec![x], GatherOp { src, width }))
    }

    pub fn concat_last(&mut self, xs: &[Var]) -> Result<Var> {
        let first = self.shape(xs[0]).to_vec();
        let lead = &first[..first.len() - 1];
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let s = self.shape(x);
            if s.len() != first.len() || &s[..s.len() - 1] != lead {
                return Err(shape_err("concat_last", &first, s));
            }
            widths.push(*s.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut data = vec![0.0; rows * total];
        let mut off = 0;
        for (&x, &w) in xs.iter().zip(&widths) {
            let src = self.value(x).data();
            for r in 0..rows {
                data[r * total + off..r * total + off + w].copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let out = Tensor::new(&shape, data)?;
        Ok(self.push(out, xs.to_vec(), ConcatLastOp { widths }))
    }

    /// Layer normalization over the last axis with learned gain and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: Scalar) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gamma), self.value(beta));
        let n = tx.last_dim();
        if tg.shape() != [n] || tb.shape() != [n] {
            return Err(shape_err("layer_norm", tx.shape(), tg.shape()));
        }
        let rows = tx.numel() / n;
        let mut xhat = vec![0.0; tx.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; tx.numel()];
        for r in 0..rows {
            let row = &tx.data()[r * n..(r + 1) * n];
            let mean = row.iter().sum::<Scalar>() / n as Scalar;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<Scalar>() / n as Scalar;
            let s = 1.0 / (var + eps).sqrt();
            inv_std[r] = s;
            for c in 0..n {
                let h = (row[c] - mean) * s;
                xhat[r * n + c] = h;
                out[r * n + c] = h * tg.data()[c] + tb.data()[c];
            }
        }
        let out = Tensor::new(tx.shape(), out)?;
        Ok(self.push(out, vec![x, gamma, beta], LayerNormOp { n, xhat, inv_std }))
    }

    /// Softmax over the last axis restricted to entries where `mask` is true.
    /// Masked entries come out as exactly zero.
    pub fn masked_softmax(&mut self, logits: Var, mask: &[bool]) -> Result<Var> {
        let tx = self.value(logits);
        if mask.len() != tx.numel() {
            return Err(shape_err("masked_softmax", tx.shape(), &[mask.len()]));
        }
        let n = tx.last_dim();
        let mut out = vec![0.0; tx.numel()];
        for (r, (row, m)) in tx.data().chunks_exact(n).zip(mask.chunks_exact(n)).enumerate() {
            let max = row
                .iter()
                .zip(m)
                .filter(|(_, &k)| k)
                .map(|(v, _)| *v)
                .fold(Scalar::NEG_INFINITY, Scalar::max);
            if max == Scalar::NEG_INFINITY {
                return Err(Error::FullyMasked { row: r });
            }
            let o = &mut out[r * n..(r + 1) * n];
            let mut z = 0.0;
            for c in 0..n {
                if m[c] {
                    o[c] = (row[c] - max).exp();
                    z += o[c];
                }
            }
            o.iter_mut().for_each(|v| *v /= z);
        }
        let out = Tensor::new(tx.shape(), out)?;
        Ok(self.push(out, vec![logits], MaskedSoftmaxOp { n }))
    }

    /// Mean sigmoid binary cross-entropy over entries where `valid` is true.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Tensor, valid: &[bool]) -> Result<Var> {
        let tx = self.value(logits);
        if tx.shape() != targets.shape() {
            return Err(shape_err("bce_with_logits", tx.shape(), targets.shape()));
        }
        if valid.len() != tx.numel() {
            return Err(shape_err("bce_with_logits", tx.shape(), &[valid.len()]));
        }
        let count = valid.iter().filter(|&&v| v).count();
        if count == 0 {
            return Err(Error::EmptyMask("bce_with_logits"));
        }
        let total: Scalar = tx
            .data()
            .iter()
            .zip(targets.data())
            .zip(valid)
            .filter(|(_, &v)| v)
            .map(|((&x, &y), _)| bce_logit_scalar(x, y))
            .sum();
        let out = Tensor::scalar(total / count as Scalar);
        Ok(self.push(
            out,
            vec![logits],
            BceOp {
                targets: targets.data().to_vec(),
                valid: valid.to_vec(),
                count,
            },
        ))
    }

    /// Row lookup `table[ids[i], :]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        if tt.shape().len() != 2 || ids.iter().any(|&i| i >= tt.shape()[0]) || ids.is_empty() {
            return Err(shape_err("embedding", tt.shape(), &[ids.len()]));
        }
        let d = tt.shape()[1];
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(&tt.data()[i * d..(i + 1) * d]);
        }
        let out = Tensor::new(&[ids.len(), d], data)?;
        Ok(self.push(out, vec![table], EmbeddingOp { ids: ids.to_vec(), d }))
    }
}
