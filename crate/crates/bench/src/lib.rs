//! Benchmarks for scoring and rank correlation; see `benches/`.
