//! Library half of the `epinit` binary: settings, incidence ingestion,
//! output directories and the subcommand bodies.

pub mod cli;
pub mod commands;
pub mod incidence;
pub mod output;
pub mod settings;

pub use cli::run;
