//! Criterion benchmarks for the forecasting engines; see `benches/`.
