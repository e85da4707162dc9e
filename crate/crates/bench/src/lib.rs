//! Criterion benchmarks for the storyline pipeline live under `benches/`.
