//! Small CSV helpers shared by every on-disk format.
//!
//! All files are plain comma-separated text. Numbers are written with Rust's
//! shortest round-trip formatting, so a value survives a write/read cycle
//! bit for bit. Empty fields encode "absent" and are distinct from zero.

use std::path::Path;

use crate::error::{Error, Result};

/// Reads a whole CSV file as string rows, keeping 1-based line numbers for
/// error reporting. The first row is returned like any other; callers decide
/// what is a header.
pub fn read_rows(path: &Path) -> Result<Vec<(usize, Vec<String>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| map_csv_error(path, e))?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| map_csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        rows.push((line, record.iter().map(str::to_owned).collect()));
    }
    Ok(rows)
}

pub fn write_rows<I, R, S>(path: &Path, rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    let mut writer = csv::Writer::from_path(path).map_err(|e| map_csv_error(path, e))?;
    for row in rows {
        writer.write_record(row).map_err(|e| map_csv_error(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn map_csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!("is_io_error guarantees an io kind"),
        }
    } else {
        Error::parse(path, 0, e.to_string())
    }
}

/// Shortest representation that parses back to the identical bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn parse_f64(field: &str, path: &Path, line: usize) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::parse(path, line, format!("expected a number, got {field:?}")))?;
    if !v.is_finite() {
        return Err(Error::parse(path, line, format!("non-finite number {field:?}")));
    }
    Ok(v)
}

/// Empty (or whitespace) fields mean "absent".
pub fn parse_opt_f64(field: &str, path: &Path, line: usize) -> Result<Option<f64>> {
    if field.trim().is_empty() {
        Ok(None)
    } else {
        parse_f64(field, path, line).map(Some)
    }
}

pub fn parse_opt_usize(field: &str, path: &Path, line: usize) -> Result<Option<usize>> {
    if field.trim().is_empty() {
        return Ok(None);
    }
    field
        .trim()
        .parse()
        .map(Some)
        .map_err(|_| Error::parse(path, line, format!("expected an index, got {field:?}")))
}

pub fn expect_fields(row: &[String], n: usize, path: &Path, line: usize) -> Result<()> {
    if row.len() != n {
        return Err(Error::parse(path, line, format!("expected {n} fields, got {}", row.len())));
    }
    Ok(())
}
