//! Criterion benchmarks for the alt-text pipeline; see `benches/`.
