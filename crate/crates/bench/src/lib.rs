//! Benchmark crate; see `benches/simulation.rs`.
