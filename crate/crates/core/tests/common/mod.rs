#![allow(dead_code)]

use longner::bispa::BispaConfig;
use longner::data::{Document, LabelSet, Vocab};
use longner::encoder::EncoderConfig;
use longner::model::{Model, ModelConfig};
use longner::span::SpanConfig;
use longner::{ParamStore, Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn small_config(d: usize, window: usize, m: usize, c: usize, blocks: usize) -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            d,
            heads: 2,
            layers: 1,
            window,
            max_len: 128,
            lora_rank: 2,
            ..EncoderConfig::default()
        },
        span: SpanConfig {
            band_halfwidth: m,
            channels: c,
        },
        bispa: BispaConfig {
            blocks,
            ..BispaConfig::default()
        },
    }
}

pub fn vocab(words: usize) -> Vocab {
    let tokens: Vec<String> = (0..words).map(|i| format!("w{i}")).collect();
    Vocab::build([&Document::new("v", tokens, vec![], 1).unwrap()])
}

pub fn model(cfg: ModelConfig, types: usize, seed: u64) -> (Model, ParamStore) {
    let mut store = ParamStore::new();
    let labels = LabelSet::from_names((0..types).map(|t| format!("T{t}")));
    let model = Model::new(cfg, vocab(30), labels, &mut store, &mut rng(seed)).unwrap();
    (model, store)
}

/// Adds uniform noise in `[-scale, scale)` to every parameter.
pub fn perturb(store: &mut ParamStore, scale: Scalar, rng: &mut impl Rng) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.get_mut(id).tensor.data_mut() {
            *v += rng.gen_range(-scale..scale);
        }
    }
}

pub fn random_tensor(shape: &[usize], scale: Scalar, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

pub fn random_ids(len: usize, vocab: usize, rng: &mut impl Rng) -> Vec<usize> {
    std::iter::once(Vocab::CLS_ID)
        .chain((1..len).map(|_| rng.gen_range(4..vocab)))
        .collect()
}
