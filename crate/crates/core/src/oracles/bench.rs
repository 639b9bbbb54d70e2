//! Memory and work scaling of the banded pipeline against the dense
//! references.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::alloc::measure_peak;
use super::counters;
use super::dense::{dense_encoder, dense_pipeline, dense_span_stage};
use crate::data::{Document, LabelSet, Vocab};
use crate::encoder::logn_factor;
use crate::error::Result;
use crate::model::{Model, ModelConfig};
use crate::numerics::{Graph, ParamStore, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRecord {
    #[serde(rename = "L")]
    pub len: usize,
    pub w: usize,
    pub m: usize,
    pub variant: String,
    /// Largest peak over the repeats; 0 when allocation counting is off.
    pub peak_bytes: usize,
    /// Mean over the repeats.
    pub wall_seconds: f64,
    /// Score pairs evaluated in one run.
    pub flop_count: u64,
}

/// Forward-pass variants measured at each length.
pub const VARIANTS: [&str; 6] = ["banded", "banded-encoder", "banded-span", "dense", "dense-encoder", "dense-span"];

struct Fixture {
    model: Model,
    store: ParamStore,
}

impl Fixture {
    fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let tokens: Vec<String> = (0..64).map(|i| format!("w{i}")).collect();
        let doc = Document::new("bench", tokens, vec![], 1)?;
        let vocab = Vocab::build([&doc]);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Model::new(cfg.clone(), vocab, LabelSet::from_names(["E"]), &mut store, &mut rng)?;
        Ok(Self { model, store })
    }

    /// Start and end representations `[n, d]` of the content tokens.
    fn heads(&self, ids: &[usize]) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::new();
        let h = self.model.encoder.encode(&mut g, &self.store, ids)?;
        let d = self.model.config.encoder.d;
        let n = ids.len() - 1;
        let content = g.gather_rows_shaped(h, (1..=n).map(Some).collect(), d, &[n, d])?;
        let (hs, he) = self.model.span.start_end_heads(&mut g, &self.store, content)?;
        Ok((g.value(hs).clone(), g.value(he).clone()))
    }

    fn run(&self, variant: &str, ids: &[usize], cap: usize, hs: &Tensor, he: &Tensor) -> Result<()> {
        let (model, store) = (&self.model, &self.store);
        match variant {
            "banded" => {
                model.forward_scores(&mut Graph::new(), store, ids)?;
            }
            "banded-encoder" => {
                model.encoder.encode(&mut Graph::new(), store, ids)?;
            }
            "banded-span" => {
                let mut g = Graph::new();
                let (hs, he) = (g.constant(hs.clone()), g.constant(he.clone()));
                let s = model.span.biaffine_band(&mut g, store, hs, he)?;
                model.bispa.forward(&mut g, store, s, model.m())?;
            }
            "dense" => {
                dense_pipeline(model, store, ids, cap)?;
            }
            "dense-encoder" => {
                let factor = logn_factor(ids.len(), model.config.encoder.logn_base);
                dense_encoder(&model.encoder, store, ids, factor, cap)?;
            }
            "dense-span" => {
                dense_span_stage(model, store, hs, he, cap)?;
            }
            other => unreachable!("unknown variant {other}"),
        }
        Ok(())
    }
}

/// Runs every variant at every length (dense variants only up to
/// `dense_cap` tokens), `repeats` times each, on random token ids.
pub fn bench(cfg: &ModelConfig, lengths: &[usize], repeats: usize, dense_cap: usize, seed: u64) -> Result<Vec<BenchRecord>> {
    cfg.validate()?;
    let fx = Fixture::new(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut records = Vec::new();
    for &len in lengths {
        let ids: Vec<usize> = std::iter::once(Vocab::CLS_ID)
            .chain((0..len).map(|_| rng.gen_range(4..fx.model.vocab.len())))
            .collect();
        let (hs, he) = fx.heads(&ids)?;
        for variant in VARIANTS {
            if variant.starts_with("dense") && len > dense_cap {
                continue;
            }
            let mut rec = BenchRecord {
                len,
                w: cfg.encoder.window,
                m: cfg.span.band_halfwidth,
                variant: variant.to_string(),
                peak_bytes: 0,
                wall_seconds: 0.0,
                flop_count: 0,
            };
            for _ in 0..repeats.max(1) {
                counters::reset();
                let start = Instant::now();
                let (res, peak) = measure_peak(|| fx.run(variant, &ids, dense_cap, &hs, &he));
                res?;
                rec.wall_seconds += start.elapsed().as_secs_f64();
                rec.peak_bytes = rec.peak_bytes.max(peak.unwrap_or(0));
                let c = counters::snapshot();
                rec.flop_count = c.encoder_pairs + c.span_pairs;
            }
            rec.wall_seconds /= repeats.max(1) as f64;
            log::info!("bench L={len} {variant}: {:.3}s peak {} B", rec.wall_seconds, rec.peak_bytes);
            records.push(rec);
        }
    }
    Ok(records)
}

pub fn format_table(records: &[BenchRecord]) -> String {
    let mut out = format!(
        "{:>6} {:>4} {:>4} {:<15} {:>14} {:>12} {:>14}\n",
        "L", "w", "m", "variant", "peak_bytes", "wall_seconds", "flop_count"
    );
    for r in records {
        let _ = writeln!(
            out,
            "{:>6} {:>4} {:>4} {:<15} {:>14} {:>12.4} {:>14}",
            r.len, r.w, r.m, r.variant, r.peak_bytes, r.wall_seconds, r.flop_count
        );
    }
    out
}
