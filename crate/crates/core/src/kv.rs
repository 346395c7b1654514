//! The `key: value` text format shared by config, profile, bounds and
//! parameter files. `#` starts a comment; blank lines are ignored.

use crate::error::{Error, Result};

/// One parsed entry, with its 1-based source line for error messages.
#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

/// Splits each non-comment line on the first `:` or `=`.
pub fn parse(text: &str) -> Result<Vec<Entry>> {
    let mut entries = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let split = line
            .find([':', '='])
            .ok_or_else(|| Error::config(format!("line {}: expected `key: value`", idx + 1)))?;
        let key = line[..split].trim();
        if key.is_empty() {
            return Err(Error::config(format!("line {}: empty key", idx + 1)));
        }
        entries.push(Entry {
            key: key.to_string(),
            value: line[split + 1..].trim().to_string(),
            line: idx + 1,
        });
    }
    Ok(entries)
}

pub fn parse_f64(entry: &Entry) -> Result<f64> {
    entry.value.parse::<f64>().map_err(|_| {
        Error::config(format!(
            "line {}: `{}` is not a number for key `{}`",
            entry.line, entry.value, entry.key
        ))
    })
}

/// Parses a comma-separated list of floats.
pub fn parse_f64_list(entry: &Entry) -> Result<Vec<f64>> {
    entry
        .value
        .split(',')
        .map(|s| {
            s.trim().parse::<f64>().map_err(|_| {
                Error::config(format!(
                    "line {}: `{}` is not a number list for key `{}`",
                    entry.line, entry.value, entry.key
                ))
            })
        })
        .collect()
}

pub fn parse_u64(entry: &Entry) -> Result<u64> {
    entry.value.parse::<u64>().map_err(|_| {
        Error::config(format!(
            "line {}: `{}` is not a non-negative integer for key `{}`",
            entry.line, entry.value, entry.key
        ))
    })
}
