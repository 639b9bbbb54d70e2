//! Fixtures shared by the benchmarks.

use longner::data::{Document, LabelSet, Vocab};
use longner::model::{Model, ModelConfig};
use longner::ParamStore;

pub const VOCAB_WORDS: usize = 64;

/// A freshly initialized model over `w0 .. w63` with one entity type.
pub fn fixture(config: ModelConfig, seed: u64) -> (Model, ParamStore) {
    let tokens: Vec<String> = (0..VOCAB_WORDS).map(|i| format!("w{i}")).collect();
    let doc = Document::new("bench", tokens, vec![], 1).expect("valid document");
    Model::init(config, Vocab::build([&doc]), LabelSet::from_names(["E"]), seed).expect("valid config")
}

/// `[CLS]` followed by `len` word ids in a fixed pattern.
pub fn ids(len: usize) -> Vec<usize> {
    std::iter::once(Vocab::CLS_ID)
        .chain((0..len).map(|i| 4 + (i * 7919) % VOCAB_WORDS))
        .collect()
}
