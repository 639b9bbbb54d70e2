//! Span decoding and evaluation: two-triangle averaging of band logits,
//! thresholded extraction, greedy conflict resolution, stitching of window
//! predictions back into documents, and micro/per-type P/R/F1.

mod metrics;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use metrics::{evaluate, micro_prf, EvalReport, Prf};

use crate::data::{LabelSet, Segment};
use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor};
use crate::span::BandGeometry;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    /// Logit threshold; 0 is probability 0.5.
    pub threshold: Scalar,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self { threshold: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanPrediction {
    pub start: usize,
    pub end: usize,
    pub type_id: usize,
    pub score: Scalar,
}

impl SpanPrediction {
    fn key(&self) -> (usize, usize, usize) {
        (self.start, self.end, self.type_id)
    }
}

fn band_dims(y: &Tensor, m: usize) -> Result<(usize, usize)> {
    let s = y.shape();
    if s.len() != 3 || s[1] != 2 * m + 1 {
        return Err(Error::Shape {
            op: "decode",
            lhs: s.to_vec(),
            rhs: vec![2 * m + 1],
        });
    }
    Ok((s[0], s[2]))
}

/// Averages every valid slot with its mirror: `(Y[i, j] + Y[j, i]) / 2` in
/// matrix terms. Both triangles of the result hold the same values; invalid
/// slots are zero.
pub fn symmetrize(y: &Tensor, m: usize) -> Result<Tensor> {
    let (len, r) = band_dims(y, m)?;
    let geom = BandGeometry::new(len, m);
    let w = geom.width();
    let src = y.data();
    let mut out = vec![0.0; src.len()];
    for i in 0..len {
        for k in 0..w {
            let Some(j) = geom.column(i, k) else { continue };
            let a = (i * w + k) * r;
            let b = (j * w + (2 * m - k)) * r;
            for t in 0..r {
                out[a + t] = (src[a + t] + src[b + t]) / 2.0;
            }
        }
    }
    Tensor::new(y.shape(), out)
}

/// Every upper-triangle cell `(i, j, r)` with score above `threshold`,
/// ordered by `(start, end, type)`.
pub fn extract(p: &Tensor, m: usize, threshold: Scalar) -> Result<Vec<SpanPrediction>> {
    let (len, r) = band_dims(p, m)?;
    let geom = BandGeometry::new(len, m);
    let w = geom.width();
    let mut out = Vec::new();
    for i in 0..len {
        for k in m..w {
            let Some(j) = geom.column(i, k) else { continue };
            for t in 0..r {
                let score = p.data()[(i * w + k) * r + t];
                if score > threshold {
                    out.push(SpanPrediction {
                        start: i,
                        end: j,
                        type_id: t,
                        score,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Crossing boundaries, or identical boundaries with different types.
/// Nested and disjoint spans never conflict.
pub fn conflicts(a: &SpanPrediction, b: &SpanPrediction) -> bool {
    let crossing = |x: &SpanPrediction, y: &SpanPrediction| x.start < y.start && y.start <= x.end && x.end < y.end;
    crossing(a, b) || crossing(b, a) || (a.start == b.start && a.end == b.end && a.type_id != b.type_id)
}

/// Greedy selection by descending score, ties broken by ascending
/// `(start, end, type)`. Output ordered by `(start, end, type)`.
pub fn resolve_conflicts(candidates: &[SpanPrediction]) -> Vec<SpanPrediction> {
    let mut order: Vec<&SpanPrediction> = candidates.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.key().cmp(&b.key())));
    let mut kept: Vec<SpanPrediction> = Vec::new();
    for c in order {
        if !kept.iter().any(|k| conflicts(k, c)) {
            kept.push(*c);
        }
    }
    kept.sort_by_key(SpanPrediction::key);
    kept
}

/// Maps window predictions to document coordinates, merges exact duplicates
/// keeping the highest score, and re-runs conflict resolution.
pub fn stitch(per_segment: &[Vec<SpanPrediction>], segments: &[Segment], doc_len: usize) -> Result<Vec<SpanPrediction>> {
    if per_segment.len() != segments.len() {
        return Err(Error::Invariant(format!(
            "{} prediction lists for {} segments",
            per_segment.len(),
            segments.len()
        )));
    }
    let mut merged: BTreeMap<(usize, usize, usize), Scalar> = BTreeMap::new();
    for (preds, seg) in per_segment.iter().zip(segments) {
        for p in preds {
            let (start, end) = (p.start + seg.origin, p.end + seg.origin);
            if p.end >= seg.tokens.len() || end >= doc_len || start > end {
                return Err(Error::Invariant(format!(
                    "span ({}, {}) outside document `{}` of {doc_len} tokens",
                    start, end, seg.parent_id
                )));
            }
            let s = merged.entry((start, end, p.type_id)).or_insert(Scalar::NEG_INFINITY);
            *s = s.max(p.score);
        }
    }
    let candidates: Vec<SpanPrediction> = merged
        .into_iter()
        .map(|((start, end, type_id), score)| SpanPrediction {
            start,
            end,
            type_id,
            score,
        })
        .collect();
    Ok(resolve_conflicts(&candidates))
}

/// Full decode of one window's band logits `[L, 2m+1, R]`.
pub fn decode_band(y: &Tensor, m: usize, threshold: Scalar) -> Result<Vec<SpanPrediction>> {
    let p = symmetrize(y, m)?;
    Ok(resolve_conflicts(&extract(&p, m, threshold)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
    #[serde(rename = "type")]
    pub type_name: String,
    pub score: Scalar,
}

/// One JSON record per prediction, documents in the given order.
pub fn write_predictions(path: &Path, docs: &[(String, Vec<SpanPrediction>)], labels: &LabelSet) -> Result<()> {
    let mut out = Vec::new();
    for (id, preds) in docs {
        for p in preds {
            let rec = PredictionRecord {
                doc_id: id.clone(),
                start: p.start,
                end: p.end,
                type_name: labels.name(p.type_id).to_string(),
                score: p.score,
            };
            serde_json::to_writer(&mut out, &rec)?;
            out.push(b'\n');
        }
    }
    fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

/// Reads prediction records grouped by document id. Types missing from
/// `labels` are an error.
pub fn read_predictions(path: &Path, labels: &LabelSet) -> Result<BTreeMap<String, Vec<SpanPrediction>>> {
    let text = fs::read_to_string(path)?;
    let mut out: BTreeMap<String, Vec<SpanPrediction>> = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            msg,
        };
        let rec: PredictionRecord = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        let type_id = labels
            .id(&rec.type_name)
            .ok_or_else(|| parse_err(format!("unknown entity type `{}`", rec.type_name)))?;
        out.entry(rec.doc_id).or_default().push(SpanPrediction {
            start: rec.start,
            end: rec.end,
            type_id,
            score: rec.score,
        });
    }
    Ok(out)
}
