//! Criterion benchmarks for selection and influence scoring; see `benches/`.
