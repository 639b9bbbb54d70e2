//! Per-thread work counters: attention score pairs evaluated.

use std::cell::Cell;

thread_local! {
    static ENCODER_PAIRS: Cell<u64> = const { Cell::new(0) };
    static SPAN_PAIRS: Cell<u64> = const { Cell::new(0) };
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    /// Query/key pairs scored by encoder attention, summed over heads.
    pub encoder_pairs: u64,
    /// Query/key pairs scored by span-tensor attention.
    pub span_pairs: u64,
}

pub fn add_encoder_pairs(n: u64) {
    ENCODER_PAIRS.with(|c| c.set(c.get() + n));
}

pub fn add_span_pairs(n: u64) {
    SPAN_PAIRS.with(|c| c.set(c.get() + n));
}

pub fn reset() {
    ENCODER_PAIRS.with(|c| c.set(0));
    SPAN_PAIRS.with(|c| c.set(0));
}

pub fn snapshot() -> Counts {
    Counts {
        encoder_pairs: ENCODER_PAIRS.with(Cell::get),
        span_pairs: SPAN_PAIRS.with(Cell::get),
    }
}
