//! Hardware-decoupled electromagnetic tracking engine.
//!
//! Four pipeline stages, each usable on its own:
//!
//! - [`acquisition`]: timed voltage frames from a pluggable source; the
//!   shipped source synthesizes physically consistent sensor signals.
//! - [`filter`]: per-transmitter signed amplitude extraction by single-bin
//!   DFT projection.
//! - [`fieldmodel`]: dipole flux density of each transmitter plus the
//!   induced-EMF forward model (with a Biot-Savart numerical reference).
//! - [`solver`]: bounded Levenberg-Marquardt 5-DOF pose recovery with warm
//!   starting and multi-start fallback.
//!
//! [`igtlink`] streams resolved poses as OpenIGTLink TRANSFORM messages and
//! [`pipeline`] wires everything into the live loop and the benchmark
//! protocols driven by the `pipeline-cli` binary.

pub mod acquisition;
pub mod fieldmodel;
pub mod filter;
pub mod igtlink;
pub mod pipeline;
pub mod solver;
