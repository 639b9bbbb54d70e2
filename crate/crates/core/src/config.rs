//! Run configuration: one TOML file with the sections `encoder`, `span`,
//! `bispa`, `train`, `decode` and `data`. Every key has a default, unknown
//! keys are rejected, and any key can be overridden from the environment as
//! `LONGNER_<SECTION>_<KEY>`, e.g. `LONGNER_TRAIN_BATCH_SIZE=8`.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::bispa::BispaConfig;
use crate::data::DataConfig;
use crate::decode::DecodeConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TrainConfig};
use crate::span::SpanConfig;

pub const ENV_PREFIX: &str = "LONGNER_";

const SECTIONS: [&str; 6] = ["encoder", "span", "bispa", "train", "decode", "data"];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub encoder: EncoderConfig,
    pub span: SpanConfig,
    pub bispa: BispaConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            encoder: self.encoder.clone(),
            span: self.span.clone(),
            bispa: self.bispa.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model().validate()?;
        self.train.validate()?;
        self.data.validate()?;
        if self.data.segment_len + 1 > self.encoder.max_len {
            return Err(Error::Config(format!(
                "data.segment_len {} plus [CLS] exceeds encoder.max_len {}",
                self.data.segment_len, self.encoder.max_len
            )));
        }
        Ok(())
    }

    /// Parses `text`, applies `overrides` (`LONGNER_*` variables) and
    /// validates. `path` is used in error messages only.
    pub fn from_toml_str(text: &str, path: &Path, overrides: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut table: toml::Table = parse_toml(text, path)?;
        let base: RunConfig = parse_toml(text, path)?;
        let mut changed = false;
        for (name, value) in overrides {
            changed |= apply_override(&mut table, &name, &value)?;
        }
        let cfg = if changed {
            table
                .try_into()
                .map_err(|e: toml::de::Error| Error::Config(format!("environment override: {}", e.message())))?
        } else {
            base
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads the file at `path` (or starts from defaults when `None`) and
    /// applies overrides from the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let (text, shown) = match path {
            Some(p) => (fs::read_to_string(p)?, p),
            None => (String::new(), Path::new("<defaults>")),
        };
        Self::from_toml_str(&text, shown, std::env::vars())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Sets `section.key` from a `LONGNER_SECTION_KEY` variable. Returns
/// whether the variable was an override; other variables are ignored.
fn apply_override(table: &mut toml::Table, name: &str, raw: &str) -> Result<bool> {
    let Some(rest) = name.strip_prefix(ENV_PREFIX) else {
        return Ok(false);
    };
    let rest = rest.to_ascii_lowercase();
    let Some((section, key)) = SECTIONS
        .iter()
        .find_map(|s| rest.strip_prefix(s).and_then(|k| k.strip_prefix('_')).map(|k| (*s, k)))
    else {
        return Err(Error::Config(format!("environment variable {name} names no config section")));
    };
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let entry = table.entry(section).or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let toml::Value::Table(sec) = entry else {
        return Err(Error::Config(format!("`{section}` is not a table")));
    };
    sec.insert(key.to_string(), value);
    Ok(true)
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Deserializes TOML, reporting failures with the 1-based line number.
pub fn parse_toml<T: DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.span().map_or(0, |s| line_of(text, s.start)),
        msg: e.message().to_string(),
    })
}

pub fn load_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    parse_toml(&fs::read_to_string(path)?, path)
}
