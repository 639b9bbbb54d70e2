//! Line-delimited JSON datasets.
//!
//! One record per line:
//! `{"id": "doc-1", "tokens": ["a", "b"], "entities": [{"start": 0, "end": 1, "type": "PER"}]}`

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::document::{Document, Entity, LabelSet};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    tokens: Vec<String>,
    #[serde(default)]
    entities: Vec<EntityRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntityRecord {
    start: usize,
    end: usize,
    #[serde(rename = "type")]
    kind: String,
}

/// Parses a dataset. Type names map through `labels` when given, otherwise
/// the label set is inferred from the file (lexicographic order).
pub fn parse_jsonl(text: &str, path: &Path, labels: Option<&LabelSet>) -> Result<(Vec<Document>, LabelSet)> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        records.push(rec);
    }
    let labels = match labels {
        Some(l) => l.clone(),
        None => LabelSet::from_names(records.iter().flat_map(|r| r.entities.iter().map(|e| e.kind.clone()))),
    };
    let mut docs = Vec::with_capacity(records.len());
    for r in records {
        let mut entities = Vec::with_capacity(r.entities.len());
        for e in &r.entities {
            let type_id = labels.id(&e.kind).ok_or_else(|| Error::Data {
                doc: r.id.clone(),
                msg: format!("unknown entity type `{}`", e.kind),
            })?;
            entities.push(Entity::new(e.start, e.end, type_id));
        }
        docs.push(Document::new(r.id, r.tokens, entities, labels.len())?);
    }
    Ok((docs, labels))
}

pub fn load_jsonl(path: &Path, labels: Option<&LabelSet>) -> Result<(Vec<Document>, LabelSet)> {
    let text = fs::read_to_string(path)?;
    parse_jsonl(&text, path, labels)
}

pub fn save_jsonl(docs: &[Document], labels: &LabelSet, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for d in docs {
        let rec = Record {
            id: d.id.clone(),
            tokens: d.tokens.clone(),
            entities: d
                .entities
                .iter()
                .map(|e| EntityRecord {
                    start: e.start,
                    end: e.end,
                    kind: labels.name(e.type_id).to_string(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
