//! Transformer encoder with arrow attention, LogN-scaled `[CLS]` logits,
//! whole word masking and LoRA adapters on the Q and V projections.

mod attention;
mod lora;
mod wwm;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use attention::{build_arrow_mask, logn_factor, AttentionMask};
pub use lora::{LoraAdapter, Projection};
pub use wwm::{apply_wwm, word_spans};

use crate::error::{Error, Result};
pub use crate::nn::{LayerNorm, Linear};
use crate::numerics::{Graph, ParamId, ParamStore, Scalar, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub d: usize,
    pub heads: usize,
    pub layers: usize,
    /// One-sided local attention window.
    pub window: usize,
    pub logn_base: Scalar,
    /// Longest accepted sequence, `[CLS]` included.
    pub max_len: usize,
    pub lora_rank: usize,
    pub lora_alpha: Scalar,
    pub mask_prob: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d: 128,
            heads: 4,
            layers: 2,
            window: 32,
            logn_base: 512.0,
            max_len: 2048,
            lora_rank: 8,
            lora_alpha: 8.0,
            mask_prob: 0.15,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("encoder: {m}")));
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return bad("d must be a positive multiple of heads");
        }
        if self.window == 0 {
            return bad("window must be >= 1");
        }
        if self.lora_rank > self.d {
            return bad("lora_rank must not exceed d");
        }
        if !(self.logn_base > 1.0) {
            return bad("logn_base must be > 1");
        }
        if !(0.0..1.0).contains(&self.mask_prob) {
            return bad("mask_prob must be in [0, 1)");
        }
        if self.lora_alpha <= 0.0 {
            return bad("lora_alpha must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct EncoderLayer {
    pub name: String,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ln1: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub ln2: LayerNorm,
    pub lora_q: Option<LoraAdapter>,
    pub lora_v: Option<LoraAdapter>,
}

/// Attention kernel used by a layer: `(graph, q, k, v) -> context`.
pub type AttentionFn<'a> = dyn Fn(&mut Graph, Var, Var, Var) -> Result<Var> + 'a;

#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub token_emb: ParamId,
    pub pos_emb: ParamId,
    pub layers: Vec<EncoderLayer>,
}

impl Encoder {
    pub fn new(config: EncoderConfig, vocab_size: usize, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let d = config.d;
        let token_emb = store.add_uniform("encoder.token_emb", &[vocab_size, d], d, rng);
        let pos_emb = store.add_uniform("encoder.pos_emb", &[config.max_len, d], d, rng);
        let layers = (0..config.layers)
            .map(|l| {
                let name = format!("encoder.layer{l}");
                EncoderLayer {
                    q: Linear::new(store, &format!("{name}.q"), d, d, rng),
                    k: Linear::new(store, &format!("{name}.k"), d, d, rng),
                    v: Linear::new(store, &format!("{name}.v"), d, d, rng),
                    o: Linear::new(store, &format!("{name}.o"), d, d, rng),
                    ln1: LayerNorm::new(store, &format!("{name}.ln1"), d),
                    ffn_in: Linear::new(store, &format!("{name}.ffn_in"), d, 4 * d, rng),
                    ffn_out: Linear::new(store, &format!("{name}.ffn_out"), 4 * d, d, rng),
                    ln2: LayerNorm::new(store, &format!("{name}.ln2"), d),
                    lora_q: None,
                    lora_v: None,
                    name,
                }
            })
            .collect();
        Ok(Self {
            config,
            token_emb,
            pos_emb,
            layers,
        })
    }

    /// Every base parameter of the encoder (adapters excluded).
    pub fn base_params(&self) -> Vec<ParamId> {
        let mut ids = vec![self.token_emb, self.pos_emb];
        for l in &self.layers {
            for lin in [&l.q, &l.k, &l.v, &l.o, &l.ffn_in, &l.ffn_out] {
                ids.extend([lin.weight, lin.bias]);
            }
            for ln in [&l.ln1, &l.ln2] {
                ids.extend([ln.gamma, ln.beta]);
            }
        }
        ids
    }

    pub fn check_len(&self, ids: &[usize]) -> Result<()> {
        if ids.len() > self.config.max_len {
            return Err(Error::SequenceTooLong {
                len: ids.len(),
                max_len: self.config.max_len,
            });
        }
        if ids.is_empty() {
            return Err(Error::InvalidTensor("empty token sequence".into()));
        }
        Ok(())
    }

    /// Token plus learned absolute position embeddings.
    pub fn embed(&self, g: &mut Graph, store: &ParamStore, ids: &[usize]) -> Result<Var> {
        self.check_len(ids)?;
        let tok = g.param(store, self.token_emb);
        let pos = g.param(store, self.pos_emb);
        let positions: Vec<usize> = (0..ids.len()).collect();
        let t = g.embedding(tok, ids)?;
        let p = g.embedding(pos, &positions)?;
        g.add(t, p)
    }

    /// Attention-free half of the layer: projections, residuals, LN and FFN
    /// around a pluggable attention kernel.
    pub fn layer_forward(
        &self,
        layer: &EncoderLayer,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        attention: &AttentionFn<'_>,
    ) -> Result<Var> {
        let q = lora::project(g, store, &layer.q, layer.lora_q.as_ref(), x)?;
        let k = layer.k.forward(g, store, x)?;
        let v = lora::project(g, store, &layer.v, layer.lora_v.as_ref(), x)?;
        let ctx = attention(g, q, k, v)?;
        let o = layer.o.forward(g, store, ctx)?;
        let x = g.add(x, o)?;
        let x = layer.ln1.forward(g, store, x)?;
        let f = layer.ffn_in.forward(g, store, x)?;
        let f = g.gelu(f);
        let f = layer.ffn_out.forward(g, store, f)?;
        let x = g.add(x, f)?;
        layer.ln2.forward(g, store, x)
    }

    /// Runs the encoder with an arbitrary attention kernel per layer.
    pub fn forward_with(&self, g: &mut Graph, store: &ParamStore, ids: &[usize], attention: &AttentionFn<'_>) -> Result<Var> {
        let mut x = self.embed(g, store, ids)?;
        for layer in &self.layers {
            x = self.layer_forward(layer, g, store, x, attention)?;
        }
        Ok(x)
    }

    /// `H = encode(ids)` with arrow attention. `ids[0]` should be `[CLS]`.
    pub fn encode(&self, g: &mut Graph, store: &ParamStore, ids: &[usize]) -> Result<Var> {
        self.encode_scaled(g, store, ids, logn_factor(ids.len(), self.config.logn_base))
    }

    /// [`encode`](Self::encode) with an explicit `[CLS]` logit factor in
    /// place of the length-derived one.
    pub fn encode_scaled(&self, g: &mut Graph, store: &ParamStore, ids: &[usize], cls_factor: Scalar) -> Result<Var> {
        self.check_len(ids)?;
        let (heads, window) = (self.config.heads, self.config.window);
        let row_scale = self.row_scale();
        let cls_scale = cls_factor * row_scale;
        let attn = move |g: &mut Graph, q: Var, k: Var, v: Var| g.arrow_attention(q, k, v, heads, window, row_scale, cls_scale);
        self.forward_with(g, store, ids, &attn)
    }

    /// Logit scale of every non-`[CLS]` query row, `1 / sqrt(d / heads)`.
    pub fn row_scale(&self) -> Scalar {
        1.0 / ((self.config.d / self.config.heads) as Scalar).sqrt()
    }

    pub fn layer_mut(&mut self, index: usize) -> &mut EncoderLayer {
        &mut self.layers[index]
    }
}
