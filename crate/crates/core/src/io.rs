//! CSV and JSON artifacts.
//!
//! Floats use the shortest representation that parses back to the same
//! value, so every artifact re-reads bit for bit. Files are written to a
//! temporary sibling and renamed into place.

use std::io::Write;
use std::path::Path as FsPath;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::framebundle::{ControlPath, Frame, FramePath, Path};
use crate::geometry::ChartPoint;

fn io_err(path: &FsPath, e: impl std::fmt::Display) -> Error {
    Error::Io { path: path.display().to_string(), message: e.to_string() }
}

/// Shortest round-trip decimal form of `v`.
pub fn format_float(v: f64) -> String {
    if v.is_finite() {
        ryu::Buffer::new().format_finite(v).to_string()
    } else if v.is_nan() {
        "NaN".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &FsPath, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => FsPath::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(path, e))?;
    tmp.write_all(bytes).map_err(|e| io_err(path, e))?;
    tmp.as_file().sync_all().map_err(|e| io_err(path, e))?;
    tmp.persist(path).map_err(|e| io_err(path, e.error))?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidInput(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &FsPath, value: &T) -> Result<()> {
    write_atomic(path, to_json(value)?.as_bytes())
}

/// A table of floats with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: Vec<String>) -> Self {
        Self { header, rows: Vec::new() }
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&self.header).map_err(|e| Error::InvalidInput(e.to_string()))?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| format_float(*v))).map_err(|e| Error::InvalidInput(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::InvalidInput(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::InvalidInput(e.to_string()))
    }

    pub fn from_csv(text: &str, source: &FsPath) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let header: Vec<String> = r.headers().map_err(|e| io_err(source, e))?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| io_err(source, e))?;
            let row = rec
                .iter()
                .map(|f| f.parse::<f64>().map_err(|_| io_err(source, format!("row {}: `{f}` is not a number", line + 1))))
                .collect::<Result<Vec<f64>>>()?;
            if row.len() != header.len() {
                return Err(io_err(source, format!("row {} has {} fields, header has {}", line + 1, row.len(), header.len())));
            }
            rows.push(row);
        }
        Ok(Self { header, rows })
    }

    pub fn write(&self, path: &FsPath) -> Result<()> {
        write_atomic(path, self.to_csv()?.as_bytes())
    }

    pub fn read(path: &FsPath) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::from_csv(&text, path)
    }
}

fn numbered(prefix: &str, d: usize) -> impl Iterator<Item = String> + '_ {
    (1..=d).map(move |i| format!("{prefix}{i}"))
}

fn grid_table(prefix: &str, rows: &[Vec<f64>]) -> Table {
    let d = rows[0].len();
    let n = rows.len() - 1;
    let mut t = Table::new(std::iter::once("t".to_string()).chain(numbered(prefix, d)).collect());
    t.rows = rows
        .iter()
        .enumerate()
        .map(|(k, r)| std::iter::once(k as f64 / n as f64).chain(r.iter().copied()).collect())
        .collect();
    t
}

/// Checks the `t` column against the uniform grid and strips it.
fn grid_rows(table: &Table, prefix: &str, source: &FsPath) -> Result<Vec<Vec<f64>>> {
    let d = table.header.len().saturating_sub(1);
    let expected: Vec<String> = std::iter::once("t".to_string()).chain(numbered(prefix, d)).collect();
    if d == 0 || table.header != expected {
        return Err(io_err(source, format!("expected header `{}`", expected.join(","))));
    }
    if table.rows.len() < 2 {
        return Err(io_err(source, "a grid curve needs at least two rows"));
    }
    let n = table.rows.len() - 1;
    for (k, row) in table.rows.iter().enumerate() {
        let t = k as f64 / n as f64;
        if (row[0] - t).abs() > 1e-9 {
            return Err(io_err(source, format!("row {}: time {} is off the uniform grid (expected {t})", k + 1, row[0])));
        }
    }
    Ok(table.rows.iter().map(|r| r[1..].to_vec()).collect())
}

pub fn path_table(path: &Path) -> Table {
    grid_table("x", &path.points().iter().map(|p| p.0.clone()).collect::<Vec<_>>())
}

pub fn path_from_table(table: &Table, source: &FsPath) -> Result<Path> {
    Path::new(grid_rows(table, "x", source)?.into_iter().map(ChartPoint).collect())
}

pub fn control_table(w: &ControlPath) -> Table {
    grid_table("w", w.values())
}

pub fn control_from_table(table: &Table, source: &FsPath) -> Result<ControlPath> {
    ControlPath::new(grid_rows(table, "w", source)?)
}

/// `t, x1..xd, E11, E12, .., Edd` with the frame matrix in row-major order.
pub fn frames_table(frames: &[Frame]) -> Table {
    let d = frames[0].dim();
    let mut header = vec!["t".to_string()];
    header.extend(numbered("x", d));
    for i in 1..=d {
        for j in 1..=d {
            header.push(format!("E{i}{j}"));
        }
    }
    let mut t = Table::new(header);
    t.rows = frames
        .iter()
        .map(|f| {
            let mut row = vec![f.time];
            row.extend(f.base.iter().copied());
            for i in 0..d {
                for j in 0..d {
                    row.push(f.basis[(i, j)]);
                }
            }
            row
        })
        .collect();
    t
}

pub fn frames_from_table(table: &Table, source: &FsPath) -> Result<FramePath> {
    let cols = table.header.len();
    let d = (1..=cols).find(|d| 1 + d + d * d == cols).ok_or_else(|| io_err(source, "frame table has an unexpected width"))?;
    if table.header != frames_table(&[Frame { time: 0.0, base: ChartPoint(vec![0.0; d]), basis: DMatrix::identity(d, d) }]).header {
        return Err(io_err(source, "unexpected frame table header"));
    }
    let frames = table
        .rows
        .iter()
        .map(|r| Frame { time: r[0], base: ChartPoint(r[1..=d].to_vec()), basis: DMatrix::from_row_slice(d, d, &r[1 + d..]) })
        .collect();
    Ok(FramePath { frames, reorthonormalize_every: None })
}
