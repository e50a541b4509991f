//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys may repeat; the
//! last occurrence wins when the entries are applied in order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

pub fn parse(text: &str) -> Result<Vec<Entry>> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got '{line}'", i + 1)))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        entries.push(Entry {
            line: i + 1,
            key: key.replace('-', "_"),
            value: value.trim().to_string(),
        });
    }
    Ok(entries)
}

pub fn load(path: impl AsRef<Path>) -> Result<Vec<Entry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse(&text)
}

/// Feed every entry to `apply`, which returns `false` for keys it does not
/// know. Unknown keys and rejected values are reported with their line.
pub fn apply_all(entries: &[Entry], mut apply: impl FnMut(&str, &str) -> Result<bool>) -> Result<()> {
    for e in entries {
        match apply(&e.key, &e.value) {
            Ok(true) => {}
            Ok(false) => return Err(Error::Config(format!("line {}: unknown key '{}'", e.line, e.key))),
            Err(Error::Config(msg)) => return Err(Error::Config(format!("line {}: {msg}", e.line))),
            Err(err) => return Err(Error::Config(format!("line {}: {err}", e.line))),
        }
    }
    Ok(())
}
