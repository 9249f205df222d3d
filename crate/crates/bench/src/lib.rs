//! Benchmarks for the restoration pipeline live in `benches/`.
