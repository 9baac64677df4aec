//! JSONL artifact files with a versioned header line.
//!
//! Every pipeline artifact is a JSONL file whose first line is a header
//! record `{"artifact": <kind>, "format_version": 1, ...}` followed by one
//! JSON document per line. Blank lines and `#` comments are tolerated on
//! read so fixtures can be annotated by hand.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Map, Value};

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ArtifactError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: expected artifact kind '{expected}', found '{found}'")]
    WrongKind {
        path: String,
        expected: String,
        found: String,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> ArtifactError {
    ArtifactError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone)]
pub struct Header {
    pub artifact: String,
    pub format_version: u64,
    pub extra: Map<String, Value>,
}

/// Write a JSONL artifact: header first, then one line per item.
pub fn write_artifact<T: Serialize>(
    path: &Path,
    kind: &str,
    extra: Value,
    items: impl IntoIterator<Item = T>,
) -> Result<usize, ArtifactError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| io_err(path, e))?;
        }
    }
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    let mut header = json!({"artifact": kind, "format_version": FORMAT_VERSION});
    if let Some(extra) = extra.as_object() {
        for (k, v) in extra {
            header[k.clone()] = v.clone();
        }
    }
    writeln!(out, "{header}").map_err(|e| io_err(path, e))?;
    let mut count = 0;
    for item in items {
        let line = serde_json::to_string(&item).map_err(|e| ArtifactError::Malformed {
            path: path.display().to_string(),
            line: count + 2,
            message: e.to_string(),
        })?;
        writeln!(out, "{line}").map_err(|e| io_err(path, e))?;
        count += 1;
    }
    out.flush().map_err(|e| io_err(path, e))?;
    Ok(count)
}

/// Read a JSONL artifact of the given kind.
pub fn read_artifact<T: DeserializeOwned>(
    path: &Path,
    kind: &str,
) -> Result<(Header, Vec<T>), ArtifactError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut header: Option<Header> = None;
    let mut items = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if header.is_none() {
            let raw: Value =
                serde_json::from_str(trimmed).map_err(|e| ArtifactError::Malformed {
                    path: path.display().to_string(),
                    line: idx + 1,
                    message: e.to_string(),
                })?;
            let found = raw
                .get("artifact")
                .and_then(Value::as_str)
                .unwrap_or("")
                .to_owned();
            if found != kind {
                return Err(ArtifactError::WrongKind {
                    path: path.display().to_string(),
                    expected: kind.to_owned(),
                    found,
                });
            }
            let mut extra = raw.as_object().cloned().unwrap_or_default();
            extra.remove("artifact");
            let format_version = extra
                .remove("format_version")
                .and_then(|v| v.as_u64())
                .unwrap_or(FORMAT_VERSION);
            header = Some(Header {
                artifact: found,
                format_version,
                extra,
            });
            continue;
        }
        let item: T = serde_json::from_str(trimmed).map_err(|e| ArtifactError::Malformed {
            path: path.display().to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        items.push(item);
    }
    let header = header.ok_or_else(|| ArtifactError::Malformed {
        path: path.display().to_string(),
        line: 0,
        message: "empty artifact file (missing header)".into(),
    })?;
    Ok((header, items))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn round_trips_items_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("things.jsonl");
        let items = vec![json!({"n": 1}), json!({"n": 2})];
        let written =
            write_artifact(&path, "things", json!({"note": "test"}), items.clone()).unwrap();
        assert_eq!(written, 2);
        let (header, back): (Header, Vec<Value>) = read_artifact(&path, "things").unwrap();
        assert_eq!(header.artifact, "things");
        assert_eq!(header.extra["note"], "test");
        assert_eq!(back, items);
    }

    #[test]
    fn rejects_wrong_kind() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.jsonl");
        write_artifact::<Value>(&path, "alpha", json!({}), vec![]).unwrap();
        let err = read_artifact::<Value>(&path, "beta").unwrap_err();
        assert!(matches!(err, ArtifactError::WrongKind { .. }));
    }
}
