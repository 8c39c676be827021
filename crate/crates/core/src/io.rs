//! Number formatting, CSV helpers and atomic file writes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Shortest decimal representation that round-trips to the same `f64`.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        ryu::Buffer::new().format_finite(x).to_string()
    }
}

pub fn parse_num(s: &str) -> Result<f64> {
    match s.trim() {
        "inf" | "+inf" | "Infinity" => Ok(f64::INFINITY),
        "-inf" | "-Infinity" => Ok(f64::NEG_INFINITY),
        "nan" | "NaN" => Ok(f64::NAN),
        t => t.parse().map_err(|_| Error::Spec(format!("not a number: '{t}'"))),
    }
}

/// Writes `contents` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = tmp_sibling(path);
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn tmp_sibling(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

/// A numeric CSV table with `# key=value` comment lines above the header.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CsvTable {
    pub meta: BTreeMap<String, String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.meta {
            out.push_str(&format!("# {k}={v}\n"));
        }
        out.push_str(&self.header.join(","));
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|&x| num(x)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut table = CsvTable::default();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if let Some(c) = line.strip_prefix('#') {
                if let Some((k, v)) = c.split_once('=') {
                    table.meta.insert(k.trim().to_string(), v.trim().to_string());
                }
            } else if table.header.is_empty() {
                table.header = line.split(',').map(|s| s.trim().to_string()).collect();
            } else {
                let row = line.split(',').map(parse_num).collect::<Result<Vec<_>>>()?;
                if row.len() != table.header.len() {
                    return Err(Error::Spec(format!(
                        "row has {} cells, header has {}",
                        row.len(),
                        table.header.len()
                    )));
                }
                table.rows.push(row);
            }
        }
        if table.header.is_empty() {
            return Err(Error::Spec("csv has no header".into()));
        }
        Ok(table)
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let idx = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Spec(format!("csv has no column '{name}'")))?;
        Ok(self.rows.iter().map(|r| r[idx]).collect())
    }
}
