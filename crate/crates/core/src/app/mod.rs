//! Command-line front end: configuration, trace ingestion, plots.

pub mod cli;
pub mod config;
pub mod plot;
pub mod trace;

pub use cli::cli_dispatch;
pub use config::{GridAxes, RunConfig};
pub use plot::{emit_plot, render_svg, PlotKind};
