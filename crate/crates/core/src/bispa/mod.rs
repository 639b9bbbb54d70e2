//! Plus-shaped band attention blocks over the span tensor: row attention,
//! column attention through the skew re-indexing, rotary and matrix position
//! embeddings, MLP fusion and a two-layer 3x3 convolution.

mod attention;
mod rope;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use rope::{rope_rotate, DEFAULT_ROPE_BASE};

use crate::error::{Error, Result};
use crate::nn::{LayerNorm, Linear, Mlp};
use crate::numerics::{Graph, ParamId, ParamStore, Scalar, Var};
use crate::span::BandGeometry;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BispaConfig {
    pub blocks: usize,
    /// Must equal the span channel width when set.
    pub channels: Option<usize>,
    pub rope_base: Scalar,
}

impl Default for BispaConfig {
    fn default() -> Self {
        Self {
            blocks: 2,
            channels: None,
            rope_base: DEFAULT_ROPE_BASE,
        }
    }
}

impl BispaConfig {
    pub fn validate(&self, span_channels: usize) -> Result<()> {
        if let Some(c) = self.channels {
            if c != span_channels {
                return Err(Error::Config(format!(
                    "bispa: channels {c} differs from span.channels {span_channels}"
                )));
            }
        }
        if span_channels % 2 != 0 {
            return Err(Error::Config(format!("bispa: channels must be even, got {span_channels}")));
        }
        if !(self.rope_base > 1.0) {
            return Err(Error::Config("bispa: rope_base must be > 1".into()));
        }
        Ok(())
    }
}

/// Slot classes for the matrix position table: row 0 for upper-triangle
/// slots (diagonal included), row 1 for lower, `None` for invalid slots.
pub fn matrix_position_classes(geom: &BandGeometry) -> Vec<Option<usize>> {
    let w = geom.width();
    (0..geom.slots())
        .map(|s| {
            let (i, k) = (s / w, s % w);
            geom.is_valid(i, k).then_some(if geom.is_upper(k) { 0 } else { 1 })
        })
        .collect()
}

/// Rotary position of every band slot: the matrix column of the cell in
/// row layout, which is the matrix row of the cell in column layout.
pub fn slot_positions(geom: &BandGeometry) -> Vec<usize> {
    let w = geom.width();
    (0..geom.slots()).map(|s| geom.column(s / w, s % w).unwrap_or(0)).collect()
}

#[derive(Clone, Debug)]
pub struct DirectionProjections {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
}

impl DirectionProjections {
    fn new(store: &mut ParamStore, name: &str, c: usize, rng: &mut impl Rng) -> Self {
        Self {
            q: Linear::new(store, &format!("{name}.q"), c, c, rng),
            k: Linear::new(store, &format!("{name}.k"), c, c, rng),
            v: Linear::new(store, &format!("{name}.v"), c, c, rng),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv3x3 {
    /// `[c_out, c_in, 3, 3]`
    pub kernel: ParamId,
    pub bias: ParamId,
}

impl Conv3x3 {
    fn new(store: &mut ParamStore, name: &str, c: usize, rng: &mut impl Rng) -> Self {
        Self {
            kernel: store.add_uniform(format!("{name}.kernel"), &[c, c, 3, 3], 9 * c, rng),
            bias: store.add_zeros(format!("{name}.bias"), &[c]),
        }
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let k = g.param(store, self.kernel);
        let b = g.param(store, self.bias);
        g.conv2d_3x3_hwc(x, k, b)
    }
}

#[derive(Clone, Debug)]
pub struct BispaBlock {
    /// `[2, c]`: upper, lower.
    pub matrix_pos: ParamId,
    pub horizontal: DirectionProjections,
    pub vertical: DirectionProjections,
    pub fuse: Mlp,
    pub ln_attn: LayerNorm,
    pub conv1: Conv3x3,
    pub conv2: Conv3x3,
    pub ln_conv: LayerNorm,
}

/// Per-call band context shared by the sublayers of a block.
pub struct BandContext {
    pub geom: BandGeometry,
    pub valid: Vec<bool>,
    pub positions: Vec<usize>,
    pub rope_base: Scalar,
}

impl BandContext {
    pub fn new(len: usize, m: usize, rope_base: Scalar) -> Self {
        let geom = BandGeometry::new(len, m);
        Self {
            valid: geom.validity(),
            positions: slot_positions(&geom),
            geom,
            rope_base,
        }
    }

    fn shape(&self, c: usize) -> [usize; 3] {
        [self.geom.len, self.geom.width(), c]
    }
}

impl BispaBlock {
    pub fn new(store: &mut ParamStore, name: &str, c: usize, rng: &mut impl Rng) -> Self {
        Self {
            matrix_pos: store.add_uniform(format!("{name}.matrix_pos"), &[2, c], c, rng),
            horizontal: DirectionProjections::new(store, &format!("{name}.horizontal"), c, rng),
            vertical: DirectionProjections::new(store, &format!("{name}.vertical"), c, rng),
            fuse: Mlp::new(store, &format!("{name}.fuse"), 2 * c, c, c, rng),
            ln_attn: LayerNorm::new(store, &format!("{name}.ln_attn"), c),
            conv1: Conv3x3::new(store, &format!("{name}.conv1"), c, rng),
            conv2: Conv3x3::new(store, &format!("{name}.conv2"), c, rng),
            ln_conv: LayerNorm::new(store, &format!("{name}.ln_conv"), c),
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut ids = vec![self.matrix_pos];
        for p in [&self.horizontal, &self.vertical] {
            for l in [&p.q, &p.k, &p.v] {
                ids.extend(l.params());
            }
        }
        ids.extend(self.fuse.params());
        ids.extend(self.ln_attn.params());
        ids.extend([self.conv1.kernel, self.conv1.bias, self.conv2.kernel, self.conv2.bias]);
        ids.extend(self.ln_conv.params());
        ids
    }

    /// Adds the upper/lower table row to every valid slot.
    pub fn add_matrix_position(&self, g: &mut Graph, store: &ParamStore, ctx: &BandContext, s: Var) -> Result<Var> {
        let table = g.param(store, self.matrix_pos);
        let c = g.shape(table)[1];
        let pos = g.gather_rows_shaped(table, matrix_position_classes(&ctx.geom), c, &ctx.shape(c))?;
        g.add(s, pos)
    }

    fn directional(&self, g: &mut Graph, store: &ParamStore, ctx: &BandContext, p: &DirectionProjections, s: Var) -> Result<Var> {
        let c = g.shape(s)[2];
        let q = p.q.forward(g, store, s)?;
        let q = g.rope(q, &ctx.positions, ctx.rope_base)?;
        let k = p.k.forward(g, store, s)?;
        let k = g.rope(k, &ctx.positions, ctx.rope_base)?;
        let v = p.v.forward(g, store, s)?;
        g.band_row_attention(q, k, v, ctx.geom.m, 1.0 / (c as Scalar).sqrt())
    }

    /// Attention along matrix rows (spans sharing a start), rotary positions
    /// at end indices.
    pub fn horizontal_attention(&self, g: &mut Graph, store: &ParamStore, ctx: &BandContext, s: Var) -> Result<Var> {
        self.directional(g, store, ctx, &self.horizontal, s)
    }

    /// Attention along matrix columns (spans sharing an end), rotary
    /// positions at start indices. Input and output are in row layout.
    pub fn vertical_attention(&self, g: &mut Graph, store: &ParamStore, ctx: &BandContext, s: Var) -> Result<Var> {
        let sv = skew(g, ctx, s)?;
        let z = self.directional(g, store, ctx, &self.vertical, sv)?;
        skew(g, ctx, z)
    }

    pub fn fuse(&self, g: &mut Graph, store: &ParamStore, ctx: &BandContext, zh: Var, zv: Var) -> Result<Var> {
        let cat = g.concat_last(&[zh, zv])?;
        let f = self.fuse.forward(g, store, cat)?;
        g.mask_rows(f, &ctx.valid)
    }

    /// `Conv(GELU(Conv(x)))` over the `[L, 2m+1]` grid, invalid slots zeroed
    /// before and after.
    pub fn conv_interaction(&self, g: &mut Graph, store: &ParamStore, ctx: &BandContext, s: Var) -> Result<Var> {
        let x = g.mask_rows(s, &ctx.valid)?;
        let y = self.conv1.forward(g, store, x)?;
        let y = g.mask_rows(y, &ctx.valid)?;
        let y = g.gelu(y);
        let y = self.conv2.forward(g, store, y)?;
        g.mask_rows(y, &ctx.valid)
    }

    fn add_norm(&self, g: &mut Graph, store: &ParamStore, ctx: &BandContext, ln: &LayerNorm, x: Var, y: Var) -> Result<Var> {
        let s = g.add(x, y)?;
        let s = ln.forward(g, store, s)?;
        g.mask_rows(s, &ctx.valid)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, ctx: &BandContext, s: Var) -> Result<Var> {
        let p = self.add_matrix_position(g, store, ctx, s)?;
        let zh = self.horizontal_attention(g, store, ctx, p)?;
        let zv = self.vertical_attention(g, store, ctx, p)?;
        let f = self.fuse(g, store, ctx, zh, zv)?;
        let s1 = self.add_norm(g, store, ctx, &self.ln_attn, s, f)?;
        let conv = self.conv_interaction(g, store, ctx, s1)?;
        self.add_norm(g, store, ctx, &self.ln_conv, s1, conv)
    }
}

/// Row layout to column layout (and back: the map is its own inverse).
pub fn skew(g: &mut Graph, ctx: &BandContext, s: Var) -> Result<Var> {
    let shape = g.shape(s).to_vec();
    g.gather_rows_shaped(s, ctx.geom.skew_index(), shape[2], &shape)
}

#[derive(Clone, Debug)]
pub struct BispaStack {
    pub config: BispaConfig,
    pub blocks: Vec<BispaBlock>,
}

impl BispaStack {
    pub fn new(config: BispaConfig, channels: usize, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        config.validate(channels)?;
        let blocks = (0..config.blocks)
            .map(|b| BispaBlock::new(store, &format!("bispa.block{b}"), channels, rng))
            .collect();
        Ok(Self { config, blocks })
    }

    pub fn context(&self, len: usize, m: usize) -> BandContext {
        BandContext::new(len, m, self.config.rope_base)
    }

    /// Applies every block in order to a `[L, 2m+1, c]` band tensor.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, s: Var, m: usize) -> Result<Var> {
        let ctx = self.context(g.shape(s)[0], m);
        let mut x = s;
        for b in &self.blocks {
            x = b.forward(g, store, &ctx, x)?;
        }
        Ok(x)
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.blocks.iter().flat_map(BispaBlock::params).collect()
    }
}
