//! Tables, model files and run configuration.

mod config;
mod model_file;
mod table;

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub use config::{CovariateColumn, DataConfig, ExperimentConfig, RunConfig};
pub use model_file::{load_model, model_from_json, model_to_json, save_model, ModelFile, SCHEMA_VERSION};
pub use table::{datasets_to_table, format_cell, Table, TableLayout, PROVENANCE_COLUMN};

/// Writes `bytes` to a temporary file next to `path`, then renames it over
/// `path`, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let io = |e: std::io::Error| Error::InvalidInput(format!("cannot write `{}`: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.flush().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

pub(crate) fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::InvalidInput(format!("cannot read `{}`: {e}", path.display())))
}
