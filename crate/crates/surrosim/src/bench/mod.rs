//! Benchmark circuits and accuracy metrics.

pub mod circuits;
