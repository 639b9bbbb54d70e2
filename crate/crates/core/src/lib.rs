//! Named entity recognition over long documents.
//!
//! The pipeline encodes a token sequence with an arrow-shaped attention mask
//! (global `[CLS]`, local window elsewhere), scores token pairs with a
//! Biaffine layer directly into a diagonal band layout, refines the band with
//! stacked plus-shaped (row and column) band attention blocks, and decodes
//! entity spans from symmetrized logits.

pub mod error;
pub mod nn;
pub mod numerics;

pub use error::{Error, Result};
pub use numerics::{Graph, ParamStore, Scalar, Tensor, Var};
pub mod bispa;
pub mod config;
pub mod data;
pub mod decode;
pub mod encoder;
pub mod model;
pub mod oracles;
pub mod span;
