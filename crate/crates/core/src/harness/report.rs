//! Deterministic report serialization: sorted-key JSON with 17 significant
//! digits, an aligned text table, and a flat CSV of check results.

use std::io;
use std::path::Path;

use serde::Serialize;

use super::config::Format;
use super::RunReport;
use crate::error::{Error, Result};

/// Writes every `f64` as `d.dddddddddddddddde±x`, which round-trips exactly.
struct Digits17;

impl serde_json::ser::Formatter for Digits17 {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        write!(w, "{:.16e}", value as f64)
    }
}

/// JSON text with keys sorted at every level (via `serde_json::Value`,
/// whose maps are ordered) and 17 significant digits per number.
pub fn to_json<S: Serialize>(value: &S) -> Result<String> {
    let tree = serde_json::to_value(value).map_err(|e| Error::Io(e.to_string()))?;
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Digits17);
    tree.serialize(&mut ser).map_err(|e| Error::Io(e.to_string()))?;
    buf.push(b'\n');
    String::from_utf8(buf).map_err(|e| Error::Io(e.to_string()))
}

fn location(loc: Option<f64>) -> String {
    loc.map_or_else(|| "-".to_string(), |v| format!("{v}"))
}

pub fn to_table(report: &RunReport) -> String {
    let rows: Vec<[String; 5]> = report
        .checks()
        .into_iter()
        .map(|(scope, c)| {
            [
                scope,
                c.name.clone(),
                if c.pass { "PASS".into() } else { "FAIL".into() },
                format!("{:.6e}", c.worst_margin),
                location(c.location),
            ]
        })
        .collect();
    let header = ["scope", "name", "pass", "worst_margin", "location"].map(String::from);
    let mut width = header.clone().map(|h| h.len());
    for r in &rows {
        for (w, cell) in width.iter_mut().zip(r) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |r: &[String; 5]| {
        let cells: Vec<String> = r.iter().zip(width).map(|(c, w)| format!("{c:<w$}")).collect();
        cells.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(&header);
    for r in &rows {
        out.push_str(&line(r));
    }
    out.push_str(&format!("overall: {}\n", if report.pass { "PASS" } else { "FAIL" }));
    out
}

pub fn to_csv(report: &RunReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(["scope", "name", "pass", "worst_margin", "location", "slack_used"])
        .map_err(io)?;
    for (scope, c) in report.checks() {
        w.write_record([
            scope,
            c.name.clone(),
            c.pass.to_string(),
            format!("{:.16e}", c.worst_margin),
            c.location.map_or_else(String::new, |v| format!("{v:.16e}")),
            format!("{:.16e}", c.slack_used),
        ])
        .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

/// Renders the report and, when `out_dir` is given, writes it there as
/// `report.json`, `report.txt` or `checks.csv`.
pub fn emit_report(report: &RunReport, format: Format, out_dir: Option<&Path>) -> Result<String> {
    let (text, file) = match format {
        Format::Json => (to_json(report)?, "report.json"),
        Format::Table => (to_table(report), "report.txt"),
        Format::Csv => (to_csv(report)?, "checks.csv"),
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(file), &text)?;
    }
    Ok(text)
}
