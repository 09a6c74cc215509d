//! Benchmark-only crate; see the `benches/` targets.

pub use rdmix_core;
