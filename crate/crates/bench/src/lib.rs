//! Criterion benchmarks for the Neural-SLAM agent live in `benches/`.
