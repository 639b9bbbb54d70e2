//! Synthetic long-document NER corpus.
//!
//! Documents are filler words with planted entities. Every entity of type
//! `T` is wrapped in the marker tokens `<T>` and `</T>`; the gold span covers
//! the tokens strictly between the markers. Entity words are drawn from the
//! same filler vocabulary, so the markers are the only evidence.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::document::{Document, Entity, LabelSet};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthType {
    pub name: String,
    pub min_len: usize,
    pub max_len: usize,
    /// Expected fraction of document tokens covered by this type, markers
    /// included.
    pub density: f64,
}

impl SynthType {
    /// Mean footprint in tokens: span plus both markers.
    pub fn mean_footprint(&self) -> f64 {
        (self.min_len + self.max_len) as f64 / 2.0 + 2.0
    }

    pub fn count_for(&self, doc_len: usize) -> usize {
        (self.density * doc_len as f64 / self.mean_footprint()).round() as usize
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    /// Number of distinct filler words.
    #[serde(default = "default_filler")]
    pub filler_vocab: usize,
    #[serde(default = "default_retries")]
    pub max_retries: usize,
    #[serde(default)]
    pub types: Vec<SynthType>,
}

fn default_filler() -> usize {
    500
}

fn default_retries() -> usize {
    1000
}

impl Default for SynthSpec {
    /// One short type (1 to 4 tokens) and one longish type (20 to 60 tokens).
    fn default() -> Self {
        Self {
            filler_vocab: default_filler(),
            max_retries: default_retries(),
            types: vec![
                SynthType {
                    name: "long".into(),
                    min_len: 20,
                    max_len: 60,
                    density: 0.2,
                },
                SynthType {
                    name: "short".into(),
                    min_len: 1,
                    max_len: 4,
                    density: 0.1,
                },
            ],
        }
    }
}

impl SynthSpec {
    /// Reads a spec from a TOML file with `filler_vocab`, `max_retries` and
    /// `[[types]]` entries.
    pub fn load(path: &std::path::Path) -> Result<Self> {
        let spec: Self = crate::config::load_toml(path)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn labels(&self) -> LabelSet {
        LabelSet::from_names(self.types.iter().map(|t| t.name.clone()))
    }

    fn validate(&self) -> Result<()> {
        if self.filler_vocab == 0 {
            return Err(Error::Config("synthetic filler_vocab must be >= 1".into()));
        }
        for t in &self.types {
            if t.min_len == 0 || t.min_len > t.max_len || !(0.0..1.0).contains(&t.density) {
                return Err(Error::Config(format!("invalid synthetic type `{}`", t.name)));
            }
        }
        Ok(())
    }
}

pub fn gen_synthetic(n_docs: usize, doc_len: usize, seed: u64, spec: &SynthSpec) -> Result<Vec<Document>> {
    spec.validate()?;
    let labels = spec.labels();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_docs)
        .map(|k| gen_doc(&format!("synth-{seed}-{k}"), doc_len, spec, &labels, &mut rng))
        .collect()
}

fn gen_doc(id: &str, doc_len: usize, spec: &SynthSpec, labels: &LabelSet, rng: &mut impl Rng) -> Result<Document> {
    let mut tokens: Vec<String> = (0..doc_len).map(|_| format!("w{}", rng.gen_range(0..spec.filler_vocab))).collect();

    let mut planned: Vec<(usize, usize)> = Vec::new(); // (type index, span length)
    for (ti, t) in spec.types.iter().enumerate() {
        for _ in 0..t.count_for(doc_len) {
            planned.push((ti, rng.gen_range(t.min_len..=t.max_len)));
        }
    }
    planned.shuffle(rng);
    // Largest footprints first keeps rejection sampling cheap.
    planned.sort_by(|a, b| b.1.cmp(&a.1));

    let mut occupied = vec![false; doc_len];
    let mut entities = Vec::with_capacity(planned.len());
    for (ti, len) in planned {
        let footprint = len + 2;
        if footprint > doc_len {
            return Err(Error::Generation(format!(
                "{id}: entity footprint {footprint} exceeds document length"
            )));
        }
        let mut placed = false;
        for _ in 0..spec.max_retries {
            let s = rng.gen_range(0..=doc_len - footprint);
            if occupied[s..s + footprint].iter().any(|&o| o) {
                continue;
            }
            occupied[s..s + footprint].iter_mut().for_each(|o| *o = true);
            let name = &spec.types[ti].name;
            tokens[s] = format!("<{name}>");
            tokens[s + footprint - 1] = format!("</{name}>");
            entities.push(Entity::new(s + 1, s + len, labels.id(name).unwrap()));
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::Generation(format!(
                "{id}: could not place a {len}-token entity after {} attempts",
                spec.max_retries
            )));
        }
    }
    entities.sort();
    Document::new(id, tokens, entities, labels.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_types_yields_pure_filler() {
        let spec = SynthSpec {
            types: vec![],
            ..SynthSpec::default()
        };
        let docs = gen_synthetic(1, 50, 3, &spec).unwrap();
        assert_eq!(docs.len(), 1);
        assert!(docs[0].entities.is_empty());
        assert!(docs[0].tokens.iter().all(|t| t.starts_with('w')));
    }

    #[test]
    fn same_seed_same_corpus() {
        let spec = SynthSpec::default();
        assert_eq!(gen_synthetic(3, 400, 9, &spec).unwrap(), gen_synthetic(3, 400, 9, &spec).unwrap());
        assert_ne!(gen_synthetic(1, 400, 9, &spec).unwrap(), gen_synthetic(1, 400, 10, &spec).unwrap());
    }

    #[test]
    fn fixed_length_type_counts() {
        let spec = SynthSpec {
            types: vec![SynthType {
                name: "pair".into(),
                min_len: 2,
                max_len: 2,
                density: 0.05,
            }],
            ..SynthSpec::default()
        };
        let docs = gen_synthetic(1, 1000, 1, &spec).unwrap();
        let d = &docs[0];
        let lens: Vec<usize> = d.entities.iter().map(Entity::len).collect();
        let mean = lens.iter().sum::<usize>() as f64 / lens.len() as f64;
        assert_eq!(mean, 2.0);
        let expected = 0.05 * 1000.0 / 4.0;
        let n = d.entities.len() as f64;
        assert!((n - expected).abs() <= 0.3 * expected, "{n} vs {expected}");
        // Recount from the marker tokens.
        assert_eq!(d.tokens.iter().filter(|t| *t == "<pair>").count(), d.entities.len());
    }

    #[test]
    fn markers_wrap_gold_spans() {
        let docs = gen_synthetic(4, 600, 5, &SynthSpec::default()).unwrap();
        let labels = SynthSpec::default().labels();
        for d in &docs {
            d.validate(labels.len()).unwrap();
            assert!(!d.entities.is_empty());
            for e in &d.entities {
                let name = labels.name(e.type_id);
                assert_eq!(d.tokens[e.start - 1], format!("<{name}>"));
                assert_eq!(d.tokens[e.end + 1], format!("</{name}>"));
                assert!(d.tokens[e.start..=e.end].iter().all(|t| t.starts_with('w')));
            }
        }
    }

    #[test]
    fn impossible_density_fails_after_retries() {
        let spec = SynthSpec {
            max_retries: 5,
            types: vec![SynthType {
                name: "big".into(),
                min_len: 30,
                max_len: 30,
                density: 0.95,
            }],
            ..SynthSpec::default()
        };
        assert!(matches!(gen_synthetic(1, 100, 0, &spec), Err(Error::Generation(_))));
    }
}
