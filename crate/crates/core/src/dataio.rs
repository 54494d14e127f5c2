//! File formats: trace CSV, metric reports, training curves and JSON side
//! files. Byte-level layouts are documented in `docs/formats.md`.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::channel_markov::{ChannelState, TraceDataset};
use crate::error::{Error, Result};
use crate::metrics::{CurvePoint, Metric, MetricCurve, MetricReport};

/// Metadata of a dataset file on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetFile {
    pub path: PathBuf,
    pub header: Vec<String>,
    pub rows: usize,
}

pub fn angle_column_name(angle: u32) -> String {
    format!("angle_{angle}")
}

/// Parse `angle_<deg>`.
pub fn parse_angle_column(name: &str) -> Result<u32> {
    name.strip_prefix("angle_")
        .filter(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
        .and_then(|d| d.parse().ok())
        .ok_or_else(|| Error::BadHeader(name.to_string()))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Render a dataset as CSV text: header of `angle_<deg>` names, then one
/// line of `1`/`-1` cells per row, `\n`-terminated.
pub fn dataset_to_csv(dataset: &TraceDataset) -> String {
    let header: Vec<String> = dataset.angles().iter().map(|&a| angle_column_name(a)).collect();
    let mut out = String::with_capacity((dataset.rows() + 1) * (3 * dataset.n_columns() + 12));
    out.push_str(&header.join(","));
    out.push('\n');
    for r in 0..dataset.rows() {
        for c in 0..dataset.n_columns() {
            if c > 0 {
                out.push(',');
            }
            out.push_str(match dataset.cell(r, c) {
                ChannelState::Los => "1",
                ChannelState::Nlos => "-1",
            });
        }
        out.push('\n');
    }
    out
}

pub fn write_dataset(dataset: &TraceDataset, path: impl AsRef<Path>) -> Result<DatasetFile> {
    let path = path.as_ref();
    let mut w = create(path)?;
    w.write_all(dataset_to_csv(dataset).as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))?;
    Ok(DatasetFile {
        path: path.to_path_buf(),
        header: dataset.angles().iter().map(|&a| angle_column_name(a)).collect(),
        rows: dataset.rows(),
    })
}

/// Parse and validate CSV text. Rows and columns in errors are 1-based
/// (row 1 is the first line after the header).
pub fn dataset_from_csv<R: BufRead>(reader: R, origin: &Path) -> Result<TraceDataset> {
    let mut lines = reader.lines();
    let header_line = match lines.next() {
        Some(line) => line.map_err(|e| Error::io(origin, e))?,
        None => {
            return Err(Error::Malformed {
                path: origin.to_path_buf(),
                reason: "missing header line".into(),
            })
        }
    };
    let header_line = header_line.trim_end_matches('\r');
    let angles: Vec<u32> = if header_line.is_empty() {
        Vec::new()
    } else {
        header_line
            .split(',')
            .map(|h| parse_angle_column(h.trim()))
            .collect::<Result<_>>()?
    };
    for (i, a) in angles.iter().enumerate() {
        if angles[..i].contains(a) {
            return Err(Error::DuplicateAngle(*a));
        }
    }
    let width = angles.len();
    let mut columns: Vec<Vec<ChannelState>> = vec![Vec::new(); width];
    let mut rows = 0;
    let mut pending_blank = false;
    for (i, line) in lines.enumerate() {
        let row = i + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            // tolerated only as the final line
            pending_blank = true;
            continue;
        }
        if pending_blank {
            return Err(Error::RaggedRow {
                row: row - 1,
                expected: width,
                found: 0,
            });
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != width {
            return Err(Error::RaggedRow {
                row,
                expected: width,
                found: cells.len(),
            });
        }
        for (c, cell) in cells.iter().enumerate() {
            let state = match cell.trim() {
                "1" => ChannelState::Los,
                "-1" => ChannelState::Nlos,
                _ => return Err(Error::InvalidState { row, column: c + 1 }),
            };
            columns[c].push(state);
        }
        rows += 1;
    }
    TraceDataset::new(angles, columns, rows)
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<TraceDataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    dataset_from_csv(BufReader::new(file), path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    /// Fixed-width table: metrics as rows, (mean, variance) pairs per angle.
    HumanTable,
    /// Pretty-printed JSON of [`MetricReport`].
    Machine,
}

pub fn report_to_table(report: &MetricReport, title: &str) -> String {
    let mut out = String::new();
    if !title.is_empty() {
        let _ = writeln!(out, "{title}");
    }
    let _ = write!(out, "{:<22}", "Metric");
    for a in &report.angles {
        let _ = write!(out, "{:<26}", format!("{a}°"));
    }
    out = out.trim_end().to_string();
    out.push('\n');
    let _ = write!(out, "{:<22}", "");
    for _ in &report.angles {
        let _ = write!(out, "{:<13}{:<13}", "mean", "variance");
    }
    out = out.trim_end().to_string();
    out.push('\n');
    for metric in Metric::ALL {
        let _ = write!(out, "{:<22}", metric.label());
        for &a in &report.angles {
            let _ = write!(
                out,
                "{:<13}{:<13}",
                format!("{:.4}", report.mean(a, metric)),
                format!("{:.3e}", report.variance(a, metric))
            );
        }
        out = out.trim_end().to_string();
        out.push('\n');
    }
    let _ = writeln!(out, "repetitions: {}", report.repetitions);
    out
}

pub fn report_to_json(report: &MetricReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

pub fn emit_report(report: &MetricReport, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    let text = match format {
        ReportFormat::HumanTable => report_to_table(report, ""),
        ReportFormat::Machine => report_to_json(report),
    };
    write_text(path, &text)
}

pub fn read_report(path: impl AsRef<Path>) -> Result<MetricReport> {
    read_json(path)
}

/// Curve CSV: header `epoch,metric,value`, one point per line.
pub fn curve_to_csv(curve: &MetricCurve) -> String {
    let mut out = String::from("epoch,metric,value\n");
    for p in &curve.points {
        let _ = writeln!(out, "{},{},{}", p.epoch, p.metric.key(), p.value);
    }
    out
}

pub fn write_curve(curve: &MetricCurve, path: impl AsRef<Path>) -> Result<()> {
    write_text(path, &curve_to_csv(curve))
}

pub fn read_curve(path: impl AsRef<Path>) -> Result<MetricCurve> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let malformed = |reason: String| Error::Malformed {
        path: path.to_path_buf(),
        reason,
    };
    let mut lines = text.lines();
    if lines.next() != Some("epoch,metric,value") {
        return Err(malformed("expected header epoch,metric,value".into()));
    }
    let mut points = Vec::new();
    for (i, line) in lines.enumerate() {
        let parts: Vec<&str> = line.split(',').collect();
        let bad = || malformed(format!("bad curve line {}: {line:?}", i + 1));
        if parts.len() != 3 {
            return Err(bad());
        }
        points.push(CurvePoint {
            epoch: parts[0].parse().map_err(|_| bad())?,
            metric: Metric::from_key(parts[1]).ok_or_else(bad)?,
            value: parts[2].parse().map_err(|_| bad())?,
        });
    }
    Ok(MetricCurve { angle: None, points })
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    write_text(path, &s)
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Malformed {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}
