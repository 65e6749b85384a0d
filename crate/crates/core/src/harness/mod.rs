//! Simulation runs: configuration, the fixed-step loop, truth-side
//! diagnostics and file output.

pub mod config;
pub mod diagnostics;
pub mod output;
pub mod sim;

pub use config::{preset, RunConfig, PRESETS};
pub use sim::{run, simulate, sweep, RunOutput, RunSummary, Simulation};
