//! Biaffine scoring written straight into the band layout.

use super::band::BandGeometry;
use crate::error::{Error, Result};
use crate::numerics::gemm::gemm;
use crate::numerics::{Backward, Graph, Scalar, Tensor, Var};

/// Rows `i` of the band and their contiguous valid column range.
fn row_range(geom: &BandGeometry, i: usize) -> (usize, usize) {
    let lo = i.saturating_sub(geom.m);
    let hi = (i + geom.m).min(geom.len - 1);
    (lo, hi)
}

struct BiaffineBandOp {
    geom: BandGeometry,
    d: usize,
    c: usize,
    /// `hs @ W1` viewed as `[L, c, d]`.
    u: Vec<Scalar>,
}

impl Backward for BiaffineBandOp {
    fn backward(&self, inputs: &[&Tensor], _: &Tensor, gout: &[Scalar], grad_in: &mut [Option<Vec<Scalar>>]) {
        let (hs, he, w1, w2) = (inputs[0].data(), inputs[1].data(), inputs[2].data(), inputs[3].data());
        let (d, c, len, width) = (self.d, self.c, self.geom.len, self.geom.width());
        let cd = c * d;
        let mut du = vec![0.0; len * cd];
        let mut da = vec![0.0; len * c];
        let mut db = vec![0.0; len * c];
        let mut dhe = vec![0.0; len * d];
        let mut dbias = vec![0.0; c];
        for i in 0..len {
            let (lo, hi) = row_range(&self.geom, i);
            let nj = hi - lo + 1;
            let klo = lo + self.geom.m - i;
            let g_i = &gout[(i * width + klo) * c..(i * width + klo + nj) * c];
            // dU_i = G_i^T He[lo..=hi]
            gemm(true, false, c, d, nj, 1.0, g_i, c, &he[lo * d..], d, 0.0, &mut du[i * cd..], d);
            // dHe[lo..=hi] += G_i U_i
            gemm(
                false,
                false,
                nj,
                d,
                c,
                1.0,
                g_i,
                c,
                &self.u[i * cd..],
                d,
                1.0,
                &mut dhe[lo * d..],
                d,
            );
            for (t, row) in g_i.chunks_exact(c).enumerate() {
                let j = lo + t;
                for r in 0..c {
                    da[i * c + r] += row[r];
                    db[j * c + r] += row[r];
                    dbias[r] += row[r];
                }
            }
        }
        if let Some(g) = grad_in[0].as_mut() {
            gemm(false, true, len, d, cd, 1.0, &du, cd, w1, cd, 1.0, g, d);
            gemm(false, false, len, d, c, 1.0, &da, c, w2, 2 * d, 1.0, g, d);
        }
        if let Some(g) = grad_in[1].as_mut() {
            g.iter_mut().zip(&dhe).for_each(|(a, b)| *a += b);
            gemm(false, false, len, d, c, 1.0, &db, c, &w2[d..], 2 * d, 1.0, g, d);
        }
        if let Some(g) = grad_in[2].as_mut() {
            gemm(true, false, d, cd, len, 1.0, hs, d, &du, cd, 1.0, g, cd);
        }
        if let Some(g) = grad_in[3].as_mut() {
            gemm(true, false, c, d, len, 1.0, &da, c, hs, d, 1.0, g, 2 * d);
            gemm(true, false, c, d, len, 1.0, &db, c, he, d, 1.0, &mut g[d..], 2 * d);
        }
        if let Some(g) = grad_in[4].as_mut() {
            g.iter_mut().zip(&dbias).for_each(|(a, b)| *a += b);
        }
    }
}

impl Graph {
    /// `S[i, k] = hs_i^T W1 he_j + W2 (hs_i ++ he_j) + b` for every valid band
    /// slot, `j = i + k - m`; invalid slots are zero. `w1` is `[d, c, d]`,
    /// `w2` is `[c, 2d]`, `b` is `[c]`. Output `[L, 2m+1, c]`.
    pub fn biaffine_band(&mut self, hs: Var, he: Var, w1: Var, w2: Var, b: Var, m: usize) -> Result<Var> {
        let (ths, the) = (self.value(hs), self.value(he));
        let (tw1, tw2, tb) = (self.value(w1), self.value(w2), self.value(b));
        let s = ths.shape();
        let ok = s.len() == 2
            && the.shape() == s
            && s[0] >= 1
            && tw1.shape().len() == 3
            && tw1.shape()[0] == s[1]
            && tw1.shape()[2] == s[1]
            && tw2.shape() == [tw1.shape()[1], 2 * s[1]]
            && tb.shape() == [tw1.shape()[1]];
        if !ok {
            return Err(Error::Shape {
                op: "biaffine_band",
                lhs: s.to_vec(),
                rhs: tw1.shape().to_vec(),
            });
        }
        if m == 0 {
            return Err(Error::Config("band half-width must be >= 1".into()));
        }
        let (len, d, c) = (s[0], s[1], tw1.shape()[1]);
        let cd = c * d;
        let geom = BandGeometry::new(len, m);
        let width = geom.width();
        let (hsd, hed, w2d) = (ths.data(), the.data(), tw2.data());
        let mut u = vec![0.0; len * cd];
        gemm(false, false, len, cd, d, 1.0, hsd, d, tw1.data(), cd, 0.0, &mut u, cd);
        let mut a = vec![0.0; len * c];
        gemm(false, true, len, c, d, 1.0, hsd, d, w2d, 2 * d, 0.0, &mut a, c);
        let mut bterm = vec![0.0; len * c];
        gemm(false, true, len, c, d, 1.0, hed, d, &w2d[d..], 2 * d, 0.0, &mut bterm, c);
        let mut out = vec![0.0; geom.slots() * c];
        for i in 0..len {
            let (lo, hi) = row_range(&geom, i);
            let nj = hi - lo + 1;
            let klo = lo + m - i;
            let o = &mut out[(i * width + klo) * c..(i * width + klo + nj) * c];
            gemm(false, true, nj, c, d, 1.0, &hed[lo * d..], d, &u[i * cd..], d, 0.0, o, c);
            for (t, row) in o.chunks_exact_mut(c).enumerate() {
                let j = lo + t;
                for r in 0..c {
                    row[r] += a[i * c + r] + bterm[j * c + r] + tb.data()[r];
                }
            }
        }
        let out = Tensor::new(&[len, width, c], out)?;
        Ok(self.push(out, vec![hs, he, w1, w2, b], BiaffineBandOp { geom, d, c, u }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_t(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn naive(hs: &Tensor, he: &Tensor, w1: &Tensor, w2: &Tensor, b: &Tensor, i: usize, j: usize, r: usize) -> Scalar {
        let d = hs.shape()[1];
        let mut s = b.data()[r];
        for p in 0..d {
            for q in 0..d {
                s += hs.at(&[i, p]) * w1.at(&[p, r, q]) * he.at(&[j, q]);
            }
            s += w2.at(&[r, p]) * hs.at(&[i, p]) + w2.at(&[r, d + p]) * he.at(&[j, p]);
        }
        s
    }

    #[test]
    fn constant_case_and_validity() {
        let (len, d, c, m) = (3, 2, 2, 1);
        let mut g = Graph::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let hs = g.constant(rand_t(&[len, d], &mut rng));
        let he = g.constant(rand_t(&[len, d], &mut rng));
        let w1 = g.constant(Tensor::zeros(&[d, c, d]));
        let w2 = g.constant(Tensor::zeros(&[c, 2 * d]));
        let b = g.constant(Tensor::from_vec(vec![0.5, -2.0]));
        let s = g.biaffine_band(hs, he, w1, w2, b, m).unwrap();
        let geom = BandGeometry::new(len, m);
        for i in 0..len {
            for k in 0..3 {
                let want: &[Scalar] = if geom.is_valid(i, k) { &[0.5, -2.0] } else { &[0.0, 0.0] };
                assert_eq!(&g.value(s).data()[(i * 3 + k) * c..(i * 3 + k + 1) * c], want);
            }
        }
    }

    #[test]
    fn matches_naive_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (len, d, c, m) = (6, 3, 4, 2);
        let ts: Vec<Tensor> = [vec![len, d], vec![len, d], vec![d, c, d], vec![c, 2 * d], vec![c]]
            .iter()
            .map(|s| rand_t(s, &mut rng))
            .collect();
        let mut g = Graph::new();
        let v: Vec<Var> = ts.iter().map(|t| g.constant(t.clone())).collect();
        let s = g.biaffine_band(v[0], v[1], v[2], v[3], v[4], m).unwrap();
        let geom = BandGeometry::new(len, m);
        for i in 0..len {
            for k in 0..geom.width() {
                if let Some(j) = geom.column(i, k) {
                    for r in 0..c {
                        let got = g.value(s).at(&[i, k, r]);
                        let want = naive(&ts[0], &ts[1], &ts[2], &ts[3], &ts[4], i, j, r);
                        assert!((got - want).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (len, d, c, m) = (5, 3, 2, 2);
        let shapes = [vec![len, d], vec![len, d], vec![d, c, d], vec![c, 2 * d], vec![c]];
        let ts: Vec<Tensor> = shapes.iter().map(|s| rand_t(s, &mut rng)).collect();
        let weight = rand_t(&[len, 2 * m + 1, c], &mut rng);
        for which in 0..5 {
            let err = finite_diff_check(
                |g, x| {
                    let mut v: Vec<Var> = ts.iter().map(|t| g.constant(t.clone())).collect();
                    v[which] = x;
                    let s = g.biaffine_band(v[0], v[1], v[2], v[3], v[4], m)?;
                    let w = g.constant(weight.clone());
                    let p = g.mul(s, w)?;
                    Ok(g.sum(p))
                },
                &ts[which],
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-6, "input {which}: {err}");
        }
    }
}
