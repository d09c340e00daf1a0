//! Criterion benchmarks for kiln-atlas live under `benches/`.
