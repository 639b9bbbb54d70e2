//! Parameter checkpoints: a JSON manifest plus a flat little-endian `f64`
//! payload.
//!
//! ```text
//! <dir>/params.json   {"format": "longner-params", "version": 1, "dtype": "f64-le",
//!                      "data_file": "params.bin",
//!                      "params": [{"name", "shape", "offset", "frozen"}, ...]}
//! <dir>/params.bin    concatenated parameter data, offsets in bytes
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "params.json";
pub const DATA_FILE: &str = "params.bin";
const FORMAT: &str = "longner-params";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    dtype: String,
    data_file: String,
    params: Vec<Entry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    #[serde(default)]
    frozen: bool,
}

pub fn save(store: &ParamStore, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::with_capacity(store.len());
    let mut bin = BufWriter::new(fs::File::create(dir.join(DATA_FILE))?);
    let mut offset = 0u64;
    for (_, p) in store.iter() {
        entries.push(Entry {
            name: p.name.clone(),
            shape: p.tensor.shape().to_vec(),
            offset,
            frozen: p.frozen,
        });
        for &v in p.tensor.data() {
            bin.write_all(&(v as f64).to_le_bytes())?;
        }
        offset += 8 * p.tensor.numel() as u64;
    }
    bin.flush()?;
    let manifest = Manifest {
        format: FORMAT.into(),
        version: 1,
        dtype: "f64-le".into(),
        data_file: DATA_FILE.into(),
        params: entries,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load(dir: &Path) -> Result<ParamStore> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    if manifest.format != FORMAT || manifest.dtype != "f64-le" {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint {} / {}",
            manifest.format, manifest.dtype
        )));
    }
    let bytes = fs::read(dir.join(&manifest.data_file))?;
    let mut store = ParamStore::new();
    for e in manifest.params {
        let numel: usize = e.shape.iter().product();
        let start = e.offset as usize;
        let end = start + 8 * numel;
        if end > bytes.len() {
            return Err(Error::Checkpoint(format!("`{}` extends past end of data file", e.name)));
        }
        let data = bytes[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()) as Scalar)
            .collect();
        let id = store.add(e.name, Tensor::new(&e.shape, data)?);
        if e.frozen {
            store.freeze(id);
        }
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn round_trip_is_bit_exact(values in prop::collection::vec(prop::num::f64::ANY, 1..40), split in 1usize..5) {
            let mut store = ParamStore::new();
            let n = values.len();
            let cut = (n * split / 5).max(1).min(n);
            store.add("a", Tensor::from_vec(values[..cut].iter().map(|&v| v as Scalar).collect()));
            if cut < n {
                let id = store.add("b.weight", Tensor::from_vec(values[cut..].iter().map(|&v| v as Scalar).collect()));
                store.freeze(id);
            }
            let dir = tempfile::tempdir().unwrap();
            save(&store, dir.path()).unwrap();
            let back = load(dir.path()).unwrap();
            prop_assert_eq!(back.len(), store.len());
            for ((_, a), (_, b)) in store.iter().zip(back.iter()) {
                prop_assert_eq!(&a.name, &b.name);
                prop_assert_eq!(a.frozen, b.frozen);
                prop_assert_eq!(a.tensor.shape(), b.tensor.shape());
                for (x, y) in a.tensor.data().iter().zip(b.tensor.data()) {
                    prop_assert_eq!(x.to_bits(), y.to_bits());
                }
            }
        }
    }
}
