//! Benchmarks for the correlator engine live under `benches/`.
