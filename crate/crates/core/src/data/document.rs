use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gold span with inclusive token bounds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Entity {
    pub start: usize,
    pub end: usize,
    pub type_id: usize,
}

impl Entity {
    pub fn new(start: usize, end: usize, type_id: usize) -> Self {
        Self { start, end, type_id }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub tokens: Vec<String>,
    pub entities: Vec<Entity>,
}

impl Document {
    pub fn new(id: impl Into<String>, tokens: Vec<String>, entities: Vec<Entity>, num_types: usize) -> Result<Self> {
        let doc = Self {
            id: id.into(),
            tokens,
            entities,
        };
        doc.validate(num_types)?;
        Ok(doc)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn validate(&self, num_types: usize) -> Result<()> {
        let err = |msg: String| Error::Data { doc: self.id.clone(), msg };
        if self.tokens.is_empty() {
            return Err(err("document has no tokens".into()));
        }
        let mut seen = BTreeSet::new();
        for e in &self.entities {
            if e.start > e.end || e.end >= self.tokens.len() {
                return Err(err(format!(
                    "entity ({}, {}) out of range for {} tokens",
                    e.start,
                    e.end,
                    self.tokens.len()
                )));
            }
            if e.type_id >= num_types {
                return Err(err(format!("entity type id {} >= {num_types}", e.type_id)));
            }
            if !seen.insert(*e) {
                return Err(err(format!("duplicate entity ({}, {}, {})", e.start, e.end, e.type_id)));
            }
        }
        Ok(())
    }
}

/// Window of a parent document. Entities are in window coordinates.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub parent_id: String,
    pub origin: usize,
    pub tokens: Vec<String>,
    pub entities: Vec<Entity>,
}

/// Entity type names in id order (lexicographic).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    names: Vec<String>,
}

impl LabelSet {
    pub fn from_names<I, S>(names: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = names.into_iter().map(Into::into).collect();
        Self {
            names: set.into_iter().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.names.binary_search_by(|n| n.as_str().cmp(name)).ok()
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}
