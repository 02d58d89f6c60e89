//! Versioned JSON envelopes for fitted models.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format: String,
    format_version: u32,
    model: T,
}

pub fn save_json<T: Serialize>(kind: &str, value: &T, path: &Path) -> Result<()> {
    let env = Envelope {
        format: kind.to_string(),
        format_version: FORMAT_VERSION,
        model: value,
    };
    let text = serde_json::to_string_pretty(&env)?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_json<T: DeserializeOwned>(kind: &str, path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let env: Envelope<serde_json::Value> = serde_json::from_str(&text)?;
    if env.format != kind {
        return Err(Error::InvalidInput(format!(
            "{} holds a {:?} model, expected {kind:?}",
            path.display(),
            env.format
        )));
    }
    if env.format_version != FORMAT_VERSION {
        return Err(Error::InvalidInput(format!(
            "{}: unsupported format version {}",
            path.display(),
            env.format_version
        )));
    }
    Ok(serde_json::from_value(env.model)?)
}
