//! Command-line workbench: configuration, dataset ingestion, subcommand
//! implementations, and artifact emission.
//!
//! Every run takes a JSON config (unknown keys rejected), writes
//! deterministic artifacts into the output directory, and embeds the
//! resolved config plus its hash in each artifact so runs are reproducible
//! byte for byte. Errors exit nonzero with a machine-readable JSON object
//! on stdout: exit code 1 for domain errors, 2 for IO.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod ingest;
pub mod pipeline;

pub use commands::run_subcommand;
