use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_to_string, write_atomic};
use crate::error::{Error, Result};
use crate::model::HarmonizationBundle;

/// Version written by this build. Older files are read; newer are refused.
pub const SCHEMA_VERSION: u32 = 1;
const KIND: &str = "clinical_combat_bundle";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub schema_version: u32,
    pub kind: String,
    pub bundle: HarmonizationBundle<f64>,
}

pub fn model_to_json(bundle: &HarmonizationBundle<f64>) -> String {
    let file = ModelFile {
        schema_version: SCHEMA_VERSION,
        kind: KIND.into(),
        bundle: bundle.clone(),
    };
    let mut s = serde_json::to_string_pretty(&file).expect("bundle serializes");
    s.push('\n');
    s
}

pub fn model_from_json(text: &str) -> Result<HarmonizationBundle<f64>> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::InvalidInput(format!("model file is not valid JSON: {e}")))?;
    let version = value
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::InvalidInput("model file lacks a schema_version".into()))?;
    if version > u64::from(SCHEMA_VERSION) {
        return Err(Error::InvalidInput(format!(
            "model file schema version {version} is newer than the supported version {SCHEMA_VERSION}"
        )));
    }
    let file: ModelFile =
        serde_json::from_value(value).map_err(|e| Error::InvalidInput(format!("malformed model file: {e}")))?;
    if file.kind != KIND {
        return Err(Error::InvalidInput(format!("model file kind `{}` is not `{KIND}`", file.kind)));
    }
    file.bundle.check()?;
    Ok(file.bundle)
}

pub fn save_model(path: &Path, bundle: &HarmonizationBundle<f64>) -> Result<()> {
    write_atomic(path, model_to_json(bundle).as_bytes())
}

pub fn load_model(path: &Path) -> Result<HarmonizationBundle<f64>> {
    model_from_json(&read_to_string(path)?)
}
