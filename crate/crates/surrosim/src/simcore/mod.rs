//! Minimal SPICE-like circuit simulator.
//!
//! Netlist parsing, modified nodal analysis, Newton-Raphson DC with
//! gmin/source-stepping rescue, DC sweeps with warm-start
//! continuation, and fixed-step backward-Euler transient analysis.
//! Reference devices and trained surrogates stamp through the same
//! [`crate::refdev::DeviceModel`] interface.

pub mod engine;
pub mod netlist;

pub use engine::{
    dc_operating_point, dc_sweep, run_analyses, transient, OpSolution, SimError, SimOptions,
    SimResult,
};
pub use netlist::{
    parse_netlist, parse_value, Analysis, Element, ModelDef, Netlist, NetlistError, PrintItem,
    Waveform,
};
