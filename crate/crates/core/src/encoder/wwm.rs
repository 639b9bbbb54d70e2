use std::ops::Range;

use rand::Rng;

use crate::data::Vocab;

/// Word spans for a `[CLS]`-prefixed sequence of whole-word tokens: every
/// position after `[CLS]` is its own word.
pub fn word_spans(len: usize) -> Vec<Range<usize>> {
    (1..len).map(|i| i..i + 1).collect()
}

/// Whole word masking. Each word is selected independently with
/// `mask_prob`; all of its positions become `[MASK]`. `words` partitions
/// `1..len`, so `[CLS]` is never touched. Returns the corrupted ids and the
/// masked positions in ascending order.
pub fn apply_wwm(ids: &[usize], words: &[Range<usize>], mask_prob: f64, rng: &mut impl Rng) -> (Vec<usize>, Vec<usize>) {
    let mut out = ids.to_vec();
    let mut masked = Vec::new();
    if mask_prob <= 0.0 {
        return (out, masked);
    }
    for w in words {
        debug_assert!(w.start >= 1 && w.end <= ids.len());
        if rng.gen_bool(mask_prob.min(1.0)) {
            for p in w.clone() {
                out[p] = Vocab::MASK_ID;
                masked.push(p);
            }
        }
    }
    masked.sort_unstable();
    (out, masked)
}
