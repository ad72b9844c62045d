//! Criterion benchmarks for `ircr-core`; see `benches/`.
