//! Small helpers shared by every CSV reader and writer in the crate.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Shortest decimal representation that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}

pub fn parse_f64(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok()
}

pub(crate) fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

pub(crate) fn check_header(path: &Path, rdr: &mut csv::Reader<fs::File>, expected: &[&str]) -> Result<()> {
    let headers = rdr.headers().map_err(|e| Error::csv(path, e))?;
    let found: Vec<&str> = headers.iter().collect();
    if found != expected {
        return Err(Error::HeaderMismatch {
            path: path.to_path_buf(),
            expected: expected.join(","),
            found: found.join(","),
        });
    }
    Ok(())
}

/// Reads a headered all-numeric file into columns.
pub(crate) fn read_numeric_columns(path: &Path, expected: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut rdr = reader(path)?;
    check_header(path, &mut rdr, expected)?;
    let mut cols = vec![Vec::new(); expected.len()];
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        for (j, name) in expected.iter().enumerate() {
            let cell = rec.get(j).unwrap_or("");
            let v = parse_f64(cell).ok_or_else(|| Error::NonNumeric {
                path: path.to_path_buf(),
                row: i + 1,
                column: (*name).to_string(),
                value: cell.to_string(),
            })?;
            cols[j].push(v);
        }
    }
    Ok(cols)
}

/// Writes `bytes` to `path` via a sibling temporary file and a rename, so a
/// reader never observes a half-written file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension("tmp~");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Renders named columns as CSV text with round-trip-exact floats.
pub fn render_columns(header: &[&str], columns: &[&[f64]]) -> String {
    let n = columns.first().map_or(0, |c| c.len());
    let mut out = String::with_capacity(n * 24 * columns.len().max(1));
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..n {
        for (j, col) in columns.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&fmt_f64(col[i]));
        }
        out.push('\n');
    }
    out
}
