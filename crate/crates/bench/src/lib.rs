//! Criterion benchmarks for the network passes, label rasterization and
//! metrics live in `benches/`.
