//! Criterion benchmarks for the SVD, MSign and backprop kernels live in
//! `benches/`.
