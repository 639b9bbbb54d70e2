//! Documents, vocabulary, sliding-window segmentation and the synthetic
//! corpus generator.

mod document;
pub mod jsonl;
pub mod segment;
pub mod synth;
mod vocab;

pub use document::{Document, Entity, LabelSet, Segment};
pub use jsonl::{load_jsonl, save_jsonl};
pub use segment::segment;
pub use synth::{gen_synthetic, SynthSpec, SynthType};
pub use vocab::Vocab;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sliding-window segmentation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Window length in tokens, `[CLS]` excluded.
    pub segment_len: usize,
    pub stride: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            segment_len: 512,
            stride: 256,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.stride > self.segment_len {
            return Err(Error::Config(format!(
                "data: need 1 <= stride ({}) <= segment_len ({})",
                self.stride, self.segment_len
            )));
        }
        Ok(())
    }

    pub fn segments(&self, doc: &Document) -> Vec<Segment> {
        segment(doc, self.segment_len, self.stride)
    }
}
