//! Low-rank adapters: effective weight `W + (alpha / rank) * down * up`.

use rand::Rng;

use super::{Encoder, Linear};
use crate::error::{Error, Result};
use crate::numerics::gemm::gemm;
use crate::numerics::{Graph, ParamId, ParamStore, Scalar, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Projection {
    Q,
    V,
}

#[derive(Clone, Debug)]
pub struct LoraAdapter {
    /// `[d, rank]`
    pub down: ParamId,
    /// `[rank, d]`, zero at attachment.
    pub up: ParamId,
    pub rank: usize,
    pub alpha: Scalar,
}

impl LoraAdapter {
    pub fn scale(&self) -> Scalar {
        self.alpha / self.rank as Scalar
    }
}

pub(super) fn project(g: &mut Graph, store: &ParamStore, lin: &Linear, lora: Option<&LoraAdapter>, x: Var) -> Result<Var> {
    let y = lin.forward(g, store, x)?;
    let Some(a) = lora else { return Ok(y) };
    let down = g.param(store, a.down);
    let up = g.param(store, a.up);
    let h = g.matmul(x, down)?;
    let h = g.matmul(h, up)?;
    let h = g.scale(h, a.scale());
    g.add(y, h)
}

impl Encoder {
    /// Attaches an adapter to one projection and freezes that projection's
    /// base weight and bias.
    pub fn attach_lora(
        &mut self,
        store: &mut ParamStore,
        layer: usize,
        proj: Projection,
        rank: usize,
        alpha: Scalar,
        rng: &mut impl Rng,
    ) -> Result<()> {
        if rank == 0 || rank > self.config.d {
            return Err(Error::Config(format!("LoRA rank {rank} outside 1..={}", self.config.d)));
        }
        let d = self.config.d;
        let l = &mut self.layers[layer];
        let (slot, lin, tag) = match proj {
            Projection::Q => (&mut l.lora_q, &l.q, "q"),
            Projection::V => (&mut l.lora_v, &l.v, "v"),
        };
        let name = format!("{}.{tag}", l.name);
        if slot.is_some() {
            return Err(Error::LoraAttached(name));
        }
        store.freeze(lin.weight);
        store.freeze(lin.bias);
        *slot = Some(LoraAdapter {
            down: store.add_uniform(format!("{name}.lora_down"), &[d, rank], d, rng),
            up: store.add_zeros(format!("{name}.lora_up"), &[rank, d]),
            rank,
            alpha,
        });
        Ok(())
    }

    /// Q and V adapters on every layer.
    pub fn attach_lora_all(&mut self, store: &mut ParamStore, rank: usize, alpha: Scalar, rng: &mut impl Rng) -> Result<()> {
        for l in 0..self.layers.len() {
            self.attach_lora(store, l, Projection::Q, rank, alpha, rng)?;
            self.attach_lora(store, l, Projection::V, rank, alpha, rng)?;
        }
        Ok(())
    }

    /// Folds the adapters of one layer into its base weights and detaches
    /// them. The adapter tensors stay in the store, unused.
    pub fn merge_lora(&mut self, store: &mut ParamStore, layer: usize) -> Result<()> {
        let d = self.config.d;
        let l = &mut self.layers[layer];
        for (slot, lin) in [(&mut l.lora_q, &l.q), (&mut l.lora_v, &l.v)] {
            let Some(a) = slot.take() else { continue };
            let down = store.tensor(a.down).data().to_vec();
            let up = store.tensor(a.up).data().to_vec();
            let w = store.get_mut(lin.weight).tensor.data_mut();
            gemm(false, false, d, d, a.rank, a.scale(), &down, a.rank, &up, d, 1.0, w, d);
        }
        Ok(())
    }
}
