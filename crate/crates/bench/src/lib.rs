//! Criterion benchmarks for the mfgmpc solvers; see `benches/`.
