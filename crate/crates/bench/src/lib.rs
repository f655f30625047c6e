//! Criterion benchmarks for the sopool kernels live in `benches/`.
