//! Line-delimited JSON records files: a header line
//! `{"schema":1,"features":"v1"}` followed by one record per line.
//! Files are append-only.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use edgegraph_core::tune::{RecordStore, RecordsHeader, TuningRecord, FEATURES_VERSION, SCHEMA_VERSION};

use crate::files::{read_text, FileError};

pub fn header_line(h: &RecordsHeader) -> String {
    serde_json::to_string(h).expect("header serializes")
}

pub fn record_line(r: &TuningRecord) -> String {
    serde_json::to_string(r).expect("record serializes")
}

/// Renders a complete file: header plus one line per record.
pub fn to_text(h: &RecordsHeader, records: &[TuningRecord]) -> String {
    let mut out = header_line(h);
    out.push('\n');
    for r in records {
        out.push_str(&record_line(r));
        out.push('\n');
    }
    out
}

/// Parses file contents. Errors name the 1-based line. Blank lines are
/// skipped; the header must match this build's schema and feature version.
pub fn parse(path: &Path, text: &str) -> Result<(RecordsHeader, Vec<TuningRecord>), FileError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let at = |line: usize, e: serde_json::Error| FileError::Parse {
        path: path.to_path_buf(),
        line,
        column: e.column(),
        message: e.to_string(),
    };
    let (i, first) = lines.next().ok_or_else(|| FileError::invalid(path, "missing header line"))?;
    let header: RecordsHeader = serde_json::from_str(first).map_err(|e| at(i + 1, e))?;
    if header.schema != SCHEMA_VERSION || header.features != FEATURES_VERSION {
        return Err(FileError::invalid(
            path,
            format!(
                "header {} does not match schema {SCHEMA_VERSION} with features {FEATURES_VERSION}",
                header_line(&header)
            ),
        ));
    }
    let records = lines
        .map(|(i, l)| serde_json::from_str::<TuningRecord>(l).map_err(|e| at(i + 1, e)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((header, records))
}

/// Loads a records file; a missing file is an empty store.
pub fn load(path: &Path) -> Result<RecordStore, FileError> {
    if !path.exists() {
        return Ok(RecordStore::new());
    }
    let (_, records) = parse(path, &read_text(path)?)?;
    Ok(RecordStore::from_records(records))
}

/// Appends records, writing the header first when the file is new or empty.
/// An existing file's header is validated before anything is written.
pub fn append(path: &Path, records: &[TuningRecord]) -> Result<(), FileError> {
    let fresh = match std::fs::metadata(path) {
        Ok(m) => m.len() == 0,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => true,
        Err(e) => return Err(FileError::io(path, e)),
    };
    if !fresh {
        let text = read_text(path)?;
        parse(path, &text)?;
        if !text.ends_with('\n') {
            return Err(FileError::invalid(path, "last line is not terminated"));
        }
    }
    let mut text = if fresh { header_line(&RecordsHeader::default()) + "\n" } else { String::new() };
    for r in records {
        text.push_str(&record_line(r));
        text.push('\n');
    }
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(|e| FileError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| FileError::io(path, e))
}
