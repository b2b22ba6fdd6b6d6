//! Experiment plumbing behind the `corridor` binary: run manifests, sweeps and figure output.

pub mod manifest;
pub mod report;
pub mod svg;
pub mod sweep;

use std::path::PathBuf;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "CORRIDOR_OUT";

pub fn default_out_root() -> PathBuf {
    std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}
