//! Command-line harness around `gwm-core`: single runs, seed/parameter
//! sweeps on a worker pool, and static SVG plots of run outputs.

pub mod cli;
pub mod plot;
pub mod sweep;

pub use cli::{main_with_args, CliError};
