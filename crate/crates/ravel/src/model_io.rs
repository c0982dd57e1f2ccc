//! Forest model files: one JSON document tagged `"format_version":
//! "ravelforest/v1"`. Reals are written in shortest round-trip decimal form,
//! so thresholds survive a save/load cycle bit for bit.

use std::fs;
use std::path::Path;

use ravel_core::forest::{ForestModel, FORMAT_VERSION};

use crate::{Error, Result};

pub fn model_to_json(model: &ForestModel) -> String {
    serde_json::to_string(model).expect("forest models serialize")
}

pub fn model_from_json(text: &str, origin: &Path) -> Result<ForestModel> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::parse(origin, e.line(), e))?;
    let found = value
        .get("format_version")
        .and_then(|v| v.as_str())
        .ok_or_else(|| Error::parse(origin, 1, "missing `format_version`"))?;
    if found != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            path: origin.to_path_buf(),
            found: found.to_string(),
            expected: FORMAT_VERSION,
        });
    }
    let model: ForestModel = serde_json::from_value(value).map_err(|e| Error::parse(origin, 1, e))?;
    model.validate()?;
    Ok(model)
}

pub fn save_model(model: &ForestModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model_to_json(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ForestModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_json(&text, path)
}
