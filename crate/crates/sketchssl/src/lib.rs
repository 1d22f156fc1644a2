//! File formats, checkpoints, configuration, metric logs, figures,
//! experiment drivers and the `sketchssl` command line.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus_io;
pub mod data;
pub mod experiments;
pub mod metrics;
pub mod plot;
pub mod run_dir;

/// Crate version plus the source revision it was built from.
pub fn version_stamp() -> String {
    format!(
        "sketchssl {} ({})",
        env!("CARGO_PKG_VERSION"),
        env!("GIT_DESCRIBE_STAMP")
    )
}
