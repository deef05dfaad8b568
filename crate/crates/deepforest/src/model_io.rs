//! Versioned model persistence.
//!
//! Models are stored as a single UTF-8 JSON document: nested key-value
//! structure with arrays, floats encoded in shortest-round-trip form so a
//! load reproduces bit-identical predictions, contributions and importance.
//! Leaf contribution tables are persisted because rebuilding them would
//! require the training data.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cascade::CascadeModel;
use crate::error::{Error, Result};
use crate::forest::Forest;

/// Format version written by this crate.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "snake_case")]
enum Payload {
    Forest(Forest),
    Cascade(CascadeModel),
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    payload: Payload,
}

/// A model read back from disk.
#[derive(Debug)]
pub enum LoadedModel {
    Forest(Forest),
    Cascade(CascadeModel),
}

pub fn save_forest(forest: &Forest, path: &Path) -> Result<()> {
    write_file(
        path,
        &ModelFile {
            format_version: FORMAT_VERSION,
            payload: Payload::Forest(forest.clone()),
        },
    )
}

pub fn save_cascade(model: &CascadeModel, path: &Path) -> Result<()> {
    write_file(
        path,
        &ModelFile {
            format_version: FORMAT_VERSION,
            payload: Payload::Cascade(model.clone()),
        },
    )
}

fn write_file(path: &Path, file: &ModelFile) -> Result<()> {
    let text = serde_json::to_string(file).map_err(|e| Error::Internal(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Load and validate a model. Parse failures report the byte offset;
/// validation failures name the violated invariant.
pub fn load_model(path: &Path) -> Result<LoadedModel> {
    let display = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: display.clone(),
        source: e,
    })?;

    // Version gate first, so future formats fail with a version error
    // rather than a shape mismatch.
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| parse_error(&display, &text, e))?;
    let version = value
        .get("format_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::ModelParse {
            path: display.clone(),
            offset: 0,
            line: 1,
            column: 1,
            message: "missing format_version".into(),
        })?;
    if version as u32 > FORMAT_VERSION {
        return Err(Error::ModelVersion {
            found: version as u32,
            supported: FORMAT_VERSION,
        });
    }

    let file: ModelFile =
        serde_json::from_value(value).map_err(|e| parse_error(&display, &text, e))?;
    match file.payload {
        Payload::Forest(forest) => {
            forest.validate()?;
            Ok(LoadedModel::Forest(forest))
        }
        Payload::Cascade(model) => {
            model.validate()?;
            Ok(LoadedModel::Cascade(model))
        }
    }
}

fn parse_error(path: &str, text: &str, e: serde_json::Error) -> Error {
    let line = e.line().max(1);
    let column = e.column().max(1);
    let offset = byte_offset(text, line, column);
    Error::ModelParse {
        path: path.to_string(),
        offset,
        line,
        column,
        message: e.to_string(),
    }
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let mut remaining = line - 1;
    let mut offset = 0;
    for (i, b) in text.bytes().enumerate() {
        if remaining == 0 {
            break;
        }
        if b == b'\n' {
            remaining -= 1;
            offset = i + 1;
        }
    }
    offset + column.saturating_sub(1)
}
