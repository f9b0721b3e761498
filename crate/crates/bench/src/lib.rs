//! Criterion benchmarks for polyflow live in `benches/`.
