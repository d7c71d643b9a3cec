//! Workflow file format: UTF-8 JSON with schema tag `guardweave.workflow/1`.
//! Unknown fields at every level are kept and written back out.

use thiserror::Error;

use super::WorkflowDoc;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at byte {offset} ({path}): {message}")]
pub struct ParseError {
    pub offset: usize,
    pub path: String,
    pub message: String,
}

pub fn serialize(doc: &WorkflowDoc) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(doc).expect("workflow serializes");
    bytes.push(b'\n');
    bytes
}

pub fn parse(bytes: &[u8]) -> Result<WorkflowDoc, ParseError> {
    let mut de = serde_json::Deserializer::from_slice(bytes);
    let doc: WorkflowDoc = serde_path_to_error::deserialize(&mut de).map_err(|err| {
        let path = err.path().to_string();
        let inner = err.into_inner();
        ParseError {
            offset: byte_offset(bytes, inner.line(), inner.column()),
            path,
            message: inner.to_string(),
        }
    })?;
    de.end().map_err(|inner| ParseError {
        offset: byte_offset(bytes, inner.line(), inner.column()),
        path: ".".into(),
        message: inner.to_string(),
    })?;
    Ok(doc)
}

/// Converts serde_json's 1-based line/column into a byte offset.
pub(crate) fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut current = 1;
    let mut start = 0;
    for (i, b) in bytes.iter().enumerate() {
        if current == line {
            break;
        }
        if *b == b'\n' {
            current += 1;
            start = i + 1;
        }
    }
    (start + column).min(bytes.len())
}
