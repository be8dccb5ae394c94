//! Criterion benchmarks for the solve / directed-information / co-design
//! pipeline; see `benches/pipeline.rs`.
