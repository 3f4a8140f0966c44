//! Criterion benchmarks for the pipeline hot paths; see `benches/`.
