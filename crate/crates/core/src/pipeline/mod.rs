//! Configuration and commands of the batch pipeline.

mod commands;
mod config;
mod plot;

pub use commands::*;
pub use config::*;
pub use plot::line_plot;
