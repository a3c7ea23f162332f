//! Newline-delimited JSON label files: `{"token_id": "...", "label": "grounded" | "hallucinated"}`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use super::Label;
use crate::error::{Error, Result};

pub type LabelMap = BTreeMap<String, Label>;

/// Parsed labels plus the ids that appeared more than once.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Labels {
    pub map: LabelMap,
    pub duplicates: Vec<String>,
}

#[derive(Deserialize)]
struct Record {
    token_id: String,
    label: String,
}

pub fn load_labels(path: &Path) -> Result<Labels> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&text)
}

/// Writes one record per entry, skipping `Unknown` labels which the format cannot hold.
pub fn write_labels(map: &LabelMap, path: &Path) -> Result<()> {
    let mut out = String::new();
    for (token_id, label) in map {
        if *label == Label::Unknown {
            continue;
        }
        out.push_str(&serde_json::json!({ "token_id": token_id, "label": label.as_str() }).to_string());
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Parses label records; a repeated id keeps its last label and is reported as a duplicate.
pub fn parse_labels(text: &str) -> Result<Labels> {
    let mut labels = Labels::default();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let label = match record.label.as_str() {
            "grounded" => Label::Grounded,
            "hallucinated" => Label::Hallucinated,
            other => {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("unknown label `{other}`"),
                })
            }
        };
        if labels.map.insert(record.token_id.clone(), label).is_some() {
            log::warn!(
                "line {line_no}: duplicate token_id `{}`, keeping the later label",
                record.token_id
            );
            labels.duplicates.push(record.token_id);
        }
    }
    Ok(labels)
}
