//! The full span model: encoder, start/end heads, banded Biaffine, band
//! attention blocks and the output head; band labels, the loss, inference
//! and checkpoint I/O.

mod train;

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

pub use train::{predict_all, train, MetricRecord, TrainConfig, TrainReport};

use crate::bispa::{BispaConfig, BispaStack};
use crate::data::{DataConfig, Document, LabelSet, Segment, Vocab};
use crate::decode::{decode_band, stitch, SpanPrediction};
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::numerics::{checkpoint, Graph, ParamId, ParamStore, Scalar, Tensor, Var};
use crate::span::{BandGeometry, SpanConfig, SpanScorer};

/// Initial positive probability of every output logit; the head bias starts
/// at its log-odds.
pub const HEAD_PRIOR: Scalar = 0.01;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub span: SpanConfig,
    pub bispa: BispaConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.span.validate()?;
        self.bispa.validate(self.span.channels)
    }
}

/// Band-layout targets for one window.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelBand {
    /// `[L, 2m+1, R]` in `{0, 1}`.
    pub targets: Tensor,
    /// `[L, 2m+1]`
    pub valid: Vec<bool>,
    /// Gold entities longer than `m + 1` tokens.
    pub dropped_count: usize,
}

impl LabelBand {
    /// Validity expanded over the type axis, `[L * (2m+1) * R]`.
    pub fn loss_mask(&self) -> Vec<bool> {
        let r = self.targets.last_dim();
        self.valid.iter().flat_map(|&v| std::iter::repeat(v).take(r)).collect()
    }
}

/// Marks every gold entity `(i, j, r)` with `j - i <= m` at its upper slot
/// `(i, m + j - i)` and its mirrored lower slot `(j, m - (j - i))`.
pub fn build_labels(seg: &Segment, m: usize, num_types: usize) -> LabelBand {
    let len = seg.tokens.len();
    let geom = BandGeometry::new(len, m);
    let w = geom.width();
    let mut targets = Tensor::zeros(&[len, w, num_types]);
    let mut dropped_count = 0;
    for e in &seg.entities {
        let d = e.end - e.start;
        if d > m {
            dropped_count += 1;
            continue;
        }
        targets.set(&[e.start, m + d, e.type_id], 1.0);
        targets.set(&[e.end, m - d, e.type_id], 1.0);
    }
    if dropped_count > 0 {
        log::debug!(
            "{}@{}: {dropped_count} entities longer than the band (m + 1 = {}) left unsupervised",
            seg.parent_id,
            seg.origin,
            m + 1
        );
    }
    LabelBand {
        targets,
        valid: geom.validity(),
        dropped_count,
    }
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub labels: LabelSet,
    pub encoder: Encoder,
    pub span: SpanScorer,
    pub bispa: BispaStack,
    /// `c -> c -> R` over `S'' + S`.
    pub head: Mlp,
}

#[derive(Serialize, Deserialize)]
struct ModelManifest {
    config: ModelConfig,
    labels: LabelSet,
    lora: bool,
}

impl Model {
    pub fn new(config: ModelConfig, vocab: Vocab, labels: LabelSet, store: &mut ParamStore, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        if labels.is_empty() {
            return Err(Error::Config("model needs at least one entity type".into()));
        }
        let d = config.encoder.d;
        let c = config.span.channels;
        let encoder = Encoder::new(config.encoder.clone(), vocab.len(), store, rng)?;
        let span = SpanScorer::new(config.span.clone(), d, store, rng)?;
        let bispa = BispaStack::new(config.bispa.clone(), c, store, rng)?;
        let head = Mlp::new(store, "head", c, c, labels.len(), rng);
        let prior = (HEAD_PRIOR / (1.0 - HEAD_PRIOR)).ln();
        store.get_mut(head.out.bias).tensor.data_mut().fill(prior);
        Ok(Self {
            config,
            vocab,
            labels,
            encoder,
            span,
            bispa,
            head,
        })
    }

    /// Fresh parameters drawn from a ChaCha8 stream seeded with `seed`.
    pub fn init(config: ModelConfig, vocab: Vocab, labels: LabelSet, seed: u64) -> Result<(Self, ParamStore)> {
        let mut store = ParamStore::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let model = Self::new(config, vocab, labels, &mut store, &mut rng)?;
        Ok((model, store))
    }

    pub fn num_types(&self) -> usize {
        self.labels.len()
    }

    pub fn m(&self) -> usize {
        self.config.span.band_halfwidth
    }

    pub fn has_lora(&self) -> bool {
        self.encoder.layers.iter().any(|l| l.lora_q.is_some() || l.lora_v.is_some())
    }

    /// Every parameter outside the encoder.
    pub fn span_params(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.span.start.params().into();
        ids.extend(self.span.end.params());
        ids.extend([self.span.w1, self.span.w2, self.span.b]);
        ids.extend(self.bispa.params());
        ids.extend(self.head.params());
        ids
    }

    /// Band logits `[L - 1, 2m+1, R]` for `ids = [CLS] t_1 .. t_{L-1}`; the
    /// span grid covers the content tokens only.
    pub fn forward_scores(&self, g: &mut Graph, store: &ParamStore, ids: &[usize]) -> Result<Var> {
        if ids.len() < 2 {
            return Err(Error::InvalidTensor("span scoring needs at least one content token".into()));
        }
        let h = self.encoder.encode(g, store, ids)?;
        let d = self.config.encoder.d;
        let n = ids.len() - 1;
        let content = g.gather_rows_shaped(h, (1..=n).map(Some).collect(), d, &[n, d])?;
        let s = self.span.forward(g, store, content)?;
        let s2 = self.bispa.forward(g, store, s, self.m())?;
        let x = g.add(s2, s)?;
        self.head.forward(g, store, x)
    }

    pub fn loss(&self, g: &mut Graph, logits: Var, labels: &LabelBand) -> Result<Var> {
        g.bce_with_logits(logits, &labels.targets, &labels.loss_mask())
    }

    /// Inference-mode band logits for a token window.
    pub fn scores(&self, store: &ParamStore, tokens: &[String]) -> Result<Tensor> {
        let ids = self.vocab.encode_with_cls(tokens);
        let mut g = Graph::new();
        let y = self.forward_scores(&mut g, store, &ids)?;
        Ok(g.take_value(y))
    }

    /// Segments, scores, decodes and stitches one document.
    pub fn predict_document(
        &self,
        store: &ParamStore,
        doc: &Document,
        data: &DataConfig,
        threshold: Scalar,
    ) -> Result<Vec<SpanPrediction>> {
        let segments = data.segments(doc);
        let per_segment = segments
            .iter()
            .map(|s| decode_band(&self.scores(store, &s.tokens)?, self.m(), threshold))
            .collect::<Result<Vec<_>>>()?;
        stitch(&per_segment, &segments, doc.len())
    }

    /// Writes parameters, vocabulary and model manifest into `dir`.
    pub fn save(&self, store: &ParamStore, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        checkpoint::save(store, dir)?;
        self.vocab.save(&dir.join("vocab.json"))?;
        let manifest = ModelManifest {
            config: self.config.clone(),
            labels: self.labels.clone(),
            lora: self.has_lora(),
        };
        fs::write(dir.join("model.json"), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<(Self, ParamStore)> {
        let manifest: ModelManifest = serde_json::from_str(&fs::read_to_string(dir.join("model.json"))?)?;
        let vocab = Vocab::load(&dir.join("vocab.json"))?;
        let mut store = ParamStore::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut model = Self::new(manifest.config, vocab, manifest.labels, &mut store, &mut rng)?;
        if manifest.lora {
            let (r, a) = (model.config.encoder.lora_rank, model.config.encoder.lora_alpha);
            model.encoder.attach_lora_all(&mut store, r, a, &mut rng)?;
        }
        store.load_from(&checkpoint::load(dir)?)?;
        Ok((model, store))
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::data::Entity;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn tiny_config(m: usize) -> ModelConfig {
        ModelConfig {
            encoder: EncoderConfig {
                d: 8,
                heads: 2,
                layers: 1,
                window: 3,
                max_len: 64,
                lora_rank: 2,
                ..EncoderConfig::default()
            },
            span: SpanConfig {
                band_halfwidth: m,
                channels: 4,
            },
            bispa: BispaConfig {
                blocks: 2,
                ..BispaConfig::default()
            },
        }
    }

    pub(crate) fn tiny_model(m: usize, seed: u64) -> (Model, ParamStore) {
        let words: Vec<String> = (0..20).map(|i| format!("w{i}")).collect();
        let doc = Document::new("v", words, vec![], 2).unwrap();
        let vocab = Vocab::build([&doc]);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Model::new(tiny_config(m), vocab, LabelSet::from_names(["A", "B"]), &mut store, &mut rng).unwrap();
        (model, store)
    }

    fn seg(len: usize, entities: Vec<Entity>) -> Segment {
        Segment {
            parent_id: "s".into(),
            origin: 0,
            tokens: (0..len).map(|i| format!("w{i}")).collect(),
            entities,
        }
    }

    #[test]
    fn labels_examples() {
        let lb = build_labels(&seg(6, vec![]), 3, 2);
        assert!(lb.targets.data().iter().all(|&v| v == 0.0));
        assert_eq!(lb.dropped_count, 0);

        let lb = build_labels(&seg(6, vec![Entity::new(2, 4, 0)]), 3, 2);
        assert_eq!(lb.targets.at(&[2, 5, 0]), 1.0);
        assert_eq!(lb.targets.at(&[4, 1, 0]), 1.0);
        assert_eq!(lb.targets.data().iter().filter(|&&v| v != 0.0).count(), 2);

        let lb = build_labels(&seg(8, vec![Entity::new(0, 4, 1)]), 3, 2);
        assert_eq!(lb.dropped_count, 1);
        assert!(lb.targets.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn labels_are_mirror_symmetric() {
        let ents = vec![
            Entity::new(0, 0, 0),
            Entity::new(1, 3, 1),
            Entity::new(5, 7, 0),
            Entity::new(2, 3, 0),
        ];
        let (len, m) = (9, 2);
        let lb = build_labels(&seg(len, ents), m, 2);
        let geom = BandGeometry::new(len, m);
        for i in 0..len {
            for k in 0..geom.width() {
                if let Some(j) = geom.column(i, k) {
                    for r in 0..2 {
                        assert_eq!(lb.targets.at(&[i, k, r]), lb.targets.at(&[j, 2 * m - k, r]));
                    }
                } else {
                    assert!(!lb.valid[i * geom.width() + k]);
                }
            }
        }
    }

    #[test]
    fn forward_shape_and_zero_head() {
        let (model, mut store) = tiny_model(3, 1);
        let ids = model.vocab.encode_with_cls(&seg(7, vec![]).tokens);
        let mut g = Graph::new();
        let y = model.forward_scores(&mut g, &store, &ids).unwrap();
        assert_eq!(g.shape(y), &[7, 7, 2]);
        for id in model.head.params() {
            store.get_mut(id).tensor.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        store.get_mut(model.head.out.bias).tensor.data_mut().copy_from_slice(&[0.25, -1.5]);
        let mut g = Graph::new();
        let y = model.forward_scores(&mut g, &store, &ids).unwrap();
        for row in g.value(y).data().chunks_exact(2) {
            assert_eq!(row, &[0.25, -1.5]);
        }
    }

    #[test]
    fn loss_anchors() {
        let (model, _) = tiny_model(2, 1);
        let lb = build_labels(&seg(5, vec![Entity::new(1, 2, 1)]), 2, 2);
        let mut g = Graph::new();
        let zero = g.constant(Tensor::zeros(lb.targets.shape()));
        let empty = build_labels(&seg(5, vec![]), 2, 2);
        let l = model.loss(&mut g, zero, &empty).unwrap();
        assert!((g.value(l).item() - std::f64::consts::LN_2 as Scalar).abs() < 1e-12);

        let perfect: Vec<Scalar> = lb.targets.data().iter().map(|&t| if t > 0.5 { 30.0 } else { -30.0 }).collect();
        let p = g.constant(Tensor::new(lb.targets.shape(), perfect).unwrap());
        let l = model.loss(&mut g, p, &lb).unwrap();
        assert!(g.value(l).item() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<Scalar> = (0..lb.targets.numel()).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let xv = g.constant(Tensor::new(lb.targets.shape(), x.clone()).unwrap());
        let l = model.loss(&mut g, xv, &lb).unwrap();
        let mask = lb.loss_mask();
        let (mut sum, mut n) = (0.0f64, 0usize);
        for ((&x, &y), &v) in x.iter().zip(lb.targets.data()).zip(&mask) {
            if v {
                let p = 1.0 / (1.0 + (-(x as f64)).exp());
                sum += -(y as f64 * p.ln() + (1.0 - y as f64) * (1.0 - p).ln());
                n += 1;
            }
        }
        assert!((g.value(l).item() as f64 - sum / n as f64).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip_reproduces_scores() {
        let (mut model, mut store) = tiny_model(2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        model.encoder.attach_lora_all(&mut store, 2, 2.0, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        model.save(&store, dir.path()).unwrap();
        let (back, back_store) = Model::load(dir.path()).unwrap();
        let toks = seg(6, vec![]).tokens;
        assert_eq!(
            model.scores(&store, &toks).unwrap().data(),
            back.scores(&back_store, &toks).unwrap().data()
        );
        assert!(back.has_lora());
    }
}
