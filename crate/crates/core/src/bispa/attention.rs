//! Single-head attention along the rows of a band tensor. Each row attends
//! over its own valid slots only; invalid query slots produce zeros.

use crate::error::{Error, Result};
use crate::numerics::gemm::gemm;
use crate::numerics::{Backward, Graph, Scalar, Tensor, Var};
use crate::oracles::counters;
use crate::span::BandGeometry;

/// Valid slot range `klo..=khi` of row `i`.
pub(crate) fn valid_slots(geom: &BandGeometry, i: usize) -> (usize, usize) {
    let klo = geom.m.saturating_sub(i);
    let khi = (2 * geom.m).min(geom.len - 1 + geom.m - i);
    (klo, khi)
}

struct BandRowAttentionOp {
    geom: BandGeometry,
    c: usize,
    scale: Scalar,
    /// Softmax weights per row, `n_i x n_i` blocks back to back.
    probs: Vec<Scalar>,
    offsets: Vec<usize>,
}

impl Backward for BandRowAttentionOp {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, gout: &[Scalar], grad_in: &mut [Option<Vec<Scalar>>]) {
        let (q, k, v) = (inputs[0].data(), inputs[1].data(), inputs[2].data());
        let (c, w) = (self.c, self.geom.width());
        let mut gq = vec![0.0; q.len()];
        let mut gk = vec![0.0; q.len()];
        let mut gv = vec![0.0; q.len()];
        let mut dp = Vec::new();
        for i in 0..self.geom.len {
            let (klo, khi) = valid_slots(&self.geom, i);
            let n = khi - klo + 1;
            let base = (i * w + klo) * c;
            let span = base..base + n * c;
            let p = &self.probs[self.offsets[i]..self.offsets[i] + n * n];
            let go = &gout[span.clone()];
            dp.clear();
            dp.resize(n * n, 0.0);
            gemm(false, true, n, n, c, 1.0, go, c, &v[span.clone()], c, 0.0, &mut dp, n);
            for r in 0..n {
                let row_p = &p[r * n..(r + 1) * n];
                let row_d = &mut dp[r * n..(r + 1) * n];
                let mean: Scalar = row_p.iter().zip(row_d.iter()).map(|(a, b)| a * b).sum();
                for (d, &pp) in row_d.iter_mut().zip(row_p) {
                    *d = pp * (*d - mean) * self.scale;
                }
            }
            gemm(
                false,
                false,
                n,
                c,
                n,
                1.0,
                &dp,
                n,
                &k[span.clone()],
                c,
                0.0,
                &mut gq[span.clone()],
                c,
            );
            gemm(
                true,
                false,
                n,
                c,
                n,
                1.0,
                &dp,
                n,
                &q[span.clone()],
                c,
                0.0,
                &mut gk[span.clone()],
                c,
            );
            gemm(true, false, n, c, n, 1.0, p, n, go, c, 0.0, &mut gv[span.clone()], c);
        }
        for (slot, g) in grad_in.iter_mut().zip([gq, gk, gv]) {
            if let Some(acc) = slot.as_mut() {
                acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
            }
        }
    }
}

impl Graph {
    /// Row-wise scaled dot-product attention on `[L, 2m+1, c]` band tensors.
    pub fn band_row_attention(&mut self, q: Var, k: Var, v: Var, m: usize, scale: Scalar) -> Result<Var> {
        let shape = self.shape(q).to_vec();
        if shape.len() != 3 || shape[1] != 2 * m + 1 || self.shape(k) != shape.as_slice() || self.shape(v) != shape.as_slice() {
            return Err(Error::Shape {
                op: "band_row_attention",
                lhs: shape,
                rhs: self.shape(k).to_vec(),
            });
        }
        let (len, w, c) = (shape[0], shape[1], shape[2]);
        let geom = BandGeometry::new(len, m);
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut offsets = Vec::with_capacity(len);
        let mut total = 0;
        for i in 0..len {
            offsets.push(total);
            let (klo, khi) = valid_slots(&geom, i);
            total += (khi - klo + 1) * (khi - klo + 1);
        }
        counters::add_span_pairs(total as u64);
        let mut probs = vec![0.0; total];
        let mut out = vec![0.0; len * w * c];
        for i in 0..len {
            let (klo, khi) = valid_slots(&geom, i);
            let n = khi - klo + 1;
            let base = (i * w + klo) * c;
            let span = base..base + n * c;
            let p = &mut probs[offsets[i]..offsets[i] + n * n];
            gemm(false, true, n, n, c, scale, &qd[span.clone()], c, &kd[span.clone()], c, 0.0, p, n);
            for row in p.chunks_exact_mut(n) {
                let max = row.iter().copied().fold(Scalar::NEG_INFINITY, Scalar::max);
                let mut z = 0.0;
                for x in row.iter_mut() {
                    *x = (*x - max).exp();
                    z += *x;
                }
                row.iter_mut().for_each(|x| *x /= z);
            }
            gemm(false, false, n, c, n, 1.0, p, n, &vd[span.clone()], c, 0.0, &mut out[span], c);
        }
        let out = Tensor::new(&shape, out)?;
        Ok(self.push(
            out,
            vec![q, k, v],
            BandRowAttentionOp {
                geom,
                c,
                scale,
                probs,
                offsets,
            },
        ))
    }
}
