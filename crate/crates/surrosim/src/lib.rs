//! Neural surrogate device modeling with circuit-level verification.
//!
//! The crate covers the full pipeline:
//!
//! * [`refdev`] — analytic FinFET/TFET reference models with exact
//!   currents, charges, and derivatives (the data source).
//! * [`dataset`] — bias-grid and random sampling, symmetry
//!   canonicalization, regime splitting, and target transforms.
//! * [`mlp`] — a small deterministic feed-forward network with
//!   analytic input Jacobians, trained with Adam.
//! * [`surrogate`] — trained networks wrapped into a 3-terminal
//!   device model (symmetry restoration, two-region dispatch,
//!   polarity mirroring) usable by the simulator.
//! * [`simcore`] — netlist parsing, modified nodal analysis,
//!   Newton-Raphson DC, DC sweeps, backward-Euler transient.
//! * [`bench`] — benchmark circuits (SRAM butterfly/N-curve, inverter
//!   VTC, 2-NAND transient) and accuracy metrics.

pub mod bench;
pub mod dataset;
pub mod linalg;
pub mod mlp;
pub mod refdev;
pub mod simcore;
pub mod surrogate;
pub mod util;
