//! Rotary position embedding over channel pairs `(2t, 2t+1)`.

use crate::error::{Error, Result};
use crate::numerics::{Backward, Graph, Scalar, Tensor, Var};

pub const DEFAULT_ROPE_BASE: Scalar = 10_000.0;

/// `(cos, sin)` per row and channel pair, `[n, c/2]` each.
fn angles(positions: &[usize], c: usize, base: Scalar) -> (Vec<Scalar>, Vec<Scalar>) {
    let half = c / 2;
    let freqs: Vec<Scalar> = (0..half).map(|t| base.powf(-((2 * t) as Scalar) / c as Scalar)).collect();
    let mut cos = Vec::with_capacity(positions.len() * half);
    let mut sin = Vec::with_capacity(positions.len() * half);
    for &p in positions {
        for f in &freqs {
            let a = p as Scalar * f;
            cos.push(a.cos());
            sin.push(a.sin());
        }
    }
    (cos, sin)
}

fn rotate(x: &[Scalar], c: usize, cos: &[Scalar], sin: &[Scalar], inverse: bool) -> Vec<Scalar> {
    let half = c / 2;
    let mut out = vec![0.0; x.len()];
    for (r, (xr, or)) in x.chunks_exact(c).zip(out.chunks_exact_mut(c)).enumerate() {
        for t in 0..half {
            let (co, mut si) = (cos[r * half + t], sin[r * half + t]);
            if inverse {
                si = -si;
            }
            let (a, b) = (xr[2 * t], xr[2 * t + 1]);
            or[2 * t] = a * co - b * si;
            or[2 * t + 1] = a * si + b * co;
        }
    }
    out
}

fn check(shape: &[usize], positions: &[usize]) -> Result<usize> {
    let c = *shape.last().unwrap_or(&0);
    if c == 0 || c % 2 != 0 {
        return Err(Error::Config(format!("rotary embedding needs an even channel count, got {c}")));
    }
    if shape.iter().product::<usize>() / c != positions.len() {
        return Err(Error::Shape {
            op: "rope",
            lhs: shape.to_vec(),
            rhs: vec![positions.len()],
        });
    }
    Ok(c)
}

/// Rotates every last-axis vector of `x` by its row's position.
pub fn rope_rotate(x: &Tensor, positions: &[usize], base: Scalar) -> Result<Tensor> {
    let c = check(x.shape(), positions)?;
    let (cos, sin) = angles(positions, c, base);
    Tensor::new(x.shape(), rotate(x.data(), c, &cos, &sin, false))
}

struct RopeOp {
    c: usize,
    cos: Vec<Scalar>,
    sin: Vec<Scalar>,
}

impl Backward for RopeOp {
    fn backward(&self, _: &[&Tensor], _: &Tensor, gout: &[Scalar], grad_in: &mut [Option<Vec<Scalar>>]) {
        if let Some(g) = grad_in[0].as_mut() {
            let back = rotate(gout, self.c, &self.cos, &self.sin, true);
            g.iter_mut().zip(&back).for_each(|(a, b)| *a += b);
        }
    }
}

impl Graph {
    pub fn rope(&mut self, x: Var, positions: &[usize], base: Scalar) -> Result<Var> {
        let tx = self.value(x);
        let c = check(tx.shape(), positions)?;
        let (cos, sin) = angles(positions, c, base);
        let out = Tensor::new(tx.shape(), rotate(tx.data(), c, &cos, &sin, false))?;
        Ok(self.push(out, vec![x], RopeOp { c, cos, sin }))
    }
}
