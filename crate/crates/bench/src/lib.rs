//! Criterion benchmarks for the simulation and network kernels; see `benches/`.
