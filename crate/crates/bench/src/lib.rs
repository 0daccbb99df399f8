//! Criterion benchmarks for `epinit-core`; see `benches/`.
