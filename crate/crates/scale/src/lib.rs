//! File formats, run configuration, reports and the command-line front end
//! over `scale-core`.

pub mod cli;
pub mod config;
pub mod io;
pub mod pipeline;
pub mod report;
