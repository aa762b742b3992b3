//! Netlist builders for the benchmark circuits.
