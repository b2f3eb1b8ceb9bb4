//! Criterion benchmarks for pollcalc; see `benches/`.
