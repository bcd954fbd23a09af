//! Criterion benchmarks for the relaxation pipeline live under `benches/`.
