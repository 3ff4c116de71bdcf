//! Benchmark-only crate; see `benches/simulation.rs` for the measured paths.
