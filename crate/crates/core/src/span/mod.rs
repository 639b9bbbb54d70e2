//! Start/end heads and the Biaffine token-pair scorer, materialized in the
//! diagonal band layout.

mod band;
mod biaffine;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use band::{BandGeometry, BandTensor};

use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::numerics::{Graph, ParamId, ParamStore, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpanConfig {
    /// One-sided band half-width `m`; the longest extractable span has
    /// `m + 1` tokens.
    pub band_halfwidth: usize,
    /// Channel width `c` of the span tensor.
    pub channels: usize,
}

impl Default for SpanConfig {
    fn default() -> Self {
        Self {
            band_halfwidth: 16,
            channels: 64,
        }
    }
}

impl SpanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.band_halfwidth == 0 {
            return Err(Error::Config("span: band_halfwidth must be >= 1".into()));
        }
        if self.channels == 0 {
            return Err(Error::Config("span: channels must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SpanScorer {
    pub config: SpanConfig,
    pub start: Mlp,
    pub end: Mlp,
    /// `[d, c, d]`
    pub w1: ParamId,
    /// `[c, 2d]`
    pub w2: ParamId,
    /// `[c]`
    pub b: ParamId,
}

impl SpanScorer {
    pub fn new(config: SpanConfig, d: usize, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        Ok(Self {
            start: Mlp::new(store, "span.start", d, d, d, rng),
            end: Mlp::new(store, "span.end", d, d, d, rng),
            w1: store.add_uniform("span.biaffine.w1", &[d, c, d], d * d, rng),
            w2: store.add_uniform("span.biaffine.w2", &[c, 2 * d], 2 * d, rng),
            b: store.add_zeros("span.biaffine.b", &[c]),
            config,
        })
    }

    /// `(Hs, He)` from token states `[L, d]`.
    pub fn start_end_heads(&self, g: &mut Graph, store: &ParamStore, h: Var) -> Result<(Var, Var)> {
        let hs = self.start.forward(g, store, h)?;
        let he = self.end.forward(g, store, h)?;
        Ok((hs, he))
    }

    /// Span tensor `S` in band layout, `[L, 2m+1, c]`.
    pub fn biaffine_band(&self, g: &mut Graph, store: &ParamStore, hs: Var, he: Var) -> Result<Var> {
        let w1 = g.param(store, self.w1);
        let w2 = g.param(store, self.w2);
        let b = g.param(store, self.b);
        g.biaffine_band(hs, he, w1, w2, b, self.config.band_halfwidth)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, h: Var) -> Result<Var> {
        let (hs, he) = self.start_end_heads(g, store, h)?;
        self.biaffine_band(g, store, hs, he)
    }
}
