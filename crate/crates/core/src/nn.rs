//! Parameterized layers shared by the encoder, span scorer and band blocks.

use rand::Rng;

use crate::error::Result;
use crate::numerics::{Graph, ParamId, ParamStore, Scalar, Var};

pub const LN_EPS: Scalar = 1e-5;

#[derive(Clone, Debug)]
pub struct Linear {
    /// `[in, out]`
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: store.add_uniform(format!("{name}.weight"), &[fan_in, fan_out], fan_in, rng),
            bias: store.add_zeros(format!("{name}.bias"), &[fan_out]),
        }
    }

    /// Applies the layer to the last axis of `x`, for inputs of any rank.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let shape = g.shape(x).to_vec();
        if shape.len() <= 2 {
            return g.linear(x, w, Some(b));
        }
        let fan_in = *shape.last().unwrap();
        let rows = shape.iter().product::<usize>() / fan_in;
        let flat = g.reshape(x, &[rows, fan_in])?;
        let y = g.linear(flat, w, Some(b))?;
        let mut out_shape = shape;
        *out_shape.last_mut().unwrap() = g.shape(y)[1];
        g.reshape(y, &out_shape)
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        Self {
            gamma: store.add_full(format!("{name}.gamma"), &[width], 1.0),
            beta: store.add_zeros(format!("{name}.beta"), &[width]),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.layer_norm(x, gamma, beta, LN_EPS)
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.gamma, self.beta]
    }
}

/// `Linear -> GELU -> Linear`.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub hidden: Linear,
    pub out: Linear,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, hidden: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        Self {
            hidden: Linear::new(store, &format!("{name}.hidden"), fan_in, hidden, rng),
            out: Linear::new(store, &format!("{name}.out"), hidden, fan_out, rng),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.hidden.forward(g, store, x)?;
        let h = g.gelu(h);
        self.out.forward(g, store, h)
    }

    pub fn params(&self) -> [ParamId; 4] {
        [self.hidden.weight, self.hidden.bias, self.out.weight, self.out.bias]
    }
}
