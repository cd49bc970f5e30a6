//! Criterion benchmarks for the GEMM engines and layer lowering live in `benches/`.
