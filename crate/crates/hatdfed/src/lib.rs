//! File formats, experiment presets, sweeps and the command-line front end
//! for the `hatdfed-core` simulator.

pub mod bench;
pub mod chart;
pub mod cli;
pub mod config_file;
pub mod exec;
pub mod output;
pub mod presets;
pub mod sweep;
pub mod tables;

pub use exec::RayonExecutor;
