use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::document::Document;
use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const MASK: &str = "[MASK]";

/// Word-level vocabulary. Reserved ids: `[PAD]` 0, `[UNK]` 1, `[CLS]` 2,
/// `[MASK]` 3; corpus words follow in lexicographic order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    words: Vec<String>,
}

impl Vocab {
    pub const PAD_ID: usize = 0;
    pub const UNK_ID: usize = 1;
    pub const CLS_ID: usize = 2;
    pub const MASK_ID: usize = 3;

    fn from_words(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self { words, index }
    }

    pub fn build<'a>(docs: impl IntoIterator<Item = &'a Document>) -> Self {
        let corpus: BTreeSet<&str> = docs.into_iter().flat_map(|d| d.tokens.iter().map(String::as_str)).collect();
        let mut words: Vec<String> = [PAD, UNK, CLS, MASK].iter().map(|s| s.to_string()).collect();
        words.extend(corpus.into_iter().filter(|w| ![PAD, UNK, CLS, MASK].contains(w)).map(String::from));
        Self::from_words(words)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(Self::UNK_ID)
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    /// `[CLS]` followed by the word ids of `tokens`.
    pub fn encode_with_cls(&self, tokens: &[String]) -> Vec<usize> {
        std::iter::once(Self::CLS_ID).chain(tokens.iter().map(|t| self.id(t))).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = VocabFile { words: self.words.clone() };
        fs::write(path, serde_json::to_string(&f)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f: VocabFile = serde_json::from_str(&fs::read_to_string(path)?)?;
        let reserved = [PAD, UNK, CLS, MASK];
        if f.words.len() < 4 || f.words[..4] != reserved {
            return Err(Error::Checkpoint(format!("{}: reserved ids are corrupt", path.display())));
        }
        Ok(Self::from_words(f.words))
    }
}
