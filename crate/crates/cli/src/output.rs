//! Report emission: pretty JSON everywhere, CSV for tabular reports.
//! Scalar context rides along in CSV as leading `# key=value` comment
//! lines, so both formats carry the same values.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::ValueEnum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Default)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(headers: &[&str]) -> Self {
        Table {
            headers: headers.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }
}

/// A command's output: the canonical JSON value plus an optional tabular
/// rendering with scalar header lines.
pub struct Report {
    pub json: serde_json::Value,
    pub table: Option<Table>,
    pub scalars: Vec<(String, String)>,
}

impl Report {
    pub fn json_only(json: serde_json::Value) -> Self {
        Report {
            json,
            table: None,
            scalars: Vec::new(),
        }
    }
}

fn csv_escape(field: &str) -> String {
    if field.contains(',') || field.contains('"') || field.contains('\n') {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

fn render_csv(report: &Report) -> String {
    let mut out = String::new();
    for (key, value) in &report.scalars {
        let _ = writeln!(out, "# {key}={value}");
    }
    if let Some(table) = &report.table {
        let _ = writeln!(
            out,
            "{}",
            table
                .headers
                .iter()
                .map(|h| csv_escape(h))
                .collect::<Vec<_>>()
                .join(",")
        );
        for row in &table.rows {
            let _ = writeln!(
                out,
                "{}",
                row.iter().map(|f| csv_escape(f)).collect::<Vec<_>>().join(",")
            );
        }
    }
    out
}

/// Writes the report to `out` (or stdout) in the requested format. CSV for
/// a report without a tabular rendering falls back to JSON with a warning
/// on stderr.
pub fn write_report(
    report: &Report,
    format: Format,
    out: Option<&Path>,
) -> anyhow::Result<Option<PathBuf>> {
    let body = match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(&report.json)?;
            s.push('\n');
            s
        }
        Format::Csv => {
            if report.table.is_none() && report.scalars.is_empty() {
                eprintln!("note: this report has no tabular form; emitting JSON");
                let mut s = serde_json::to_string_pretty(&report.json)?;
                s.push('\n');
                s
            } else {
                render_csv(report)
            }
        }
    };
    match out {
        Some(path) => {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)
                        .with_context(|| format!("creating {}", parent.display()))?;
                }
            }
            std::fs::write(path, body).with_context(|| format!("writing {}", path.display()))?;
            Ok(Some(path.to_path_buf()))
        }
        None => {
            print!("{body}");
            Ok(None)
        }
    }
}

pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn fmt_opt_f64(v: Option<f64>) -> String {
    match v {
        Some(v) => fmt_f64(v),
        None => String::new(),
    }
}
