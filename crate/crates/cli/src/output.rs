//! Run manifests and CSV output.

use std::path::Path;

use anyhow::Context;
use fcdlif_core::io::{write_atomic, write_json};
use serde::Serialize;

use crate::Command;

pub const MANIFEST_NAME: &str = "manifest.json";

/// Everything needed to rerun a command bit-exactly. Carries no timestamps so
/// that identical invocations produce identical manifests.
#[derive(Debug, Serialize)]
struct Manifest<'a, E: Serialize> {
    tool: &'static str,
    version: &'static str,
    invocation: &'a Command,
    /// Command-specific resolved settings (model config, derived seeds, ...).
    resolved: E,
}

pub fn write_manifest<E: Serialize>(path: &Path, command: &Command, resolved: E) -> anyhow::Result<()> {
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        invocation: command,
        resolved,
    };
    write_json(path, &manifest).with_context(|| format!("writing {}", path.display()))
}

/// Serializes `rows` as a headed CSV and writes it atomically.
pub fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    write_atomic(path, &bytes).with_context(|| format!("writing {}", path.display()))
}

/// Headed CSV with a dynamic header (e.g. one column per embedding channel).
pub fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    write_atomic(path, &bytes).with_context(|| format!("writing {}", path.display()))
}
