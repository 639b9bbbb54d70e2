//! Dense reference implementations, work counters, allocation accounting
//! and the scaling benchmark.

pub mod alloc;
pub mod bench;
pub mod counters;
pub mod dense;
mod exhaustive;

pub use bench::{bench, format_table, BenchRecord};
pub use exhaustive::{exhaustive_decode, EXHAUSTIVE_CAP};
