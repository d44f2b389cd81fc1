use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::EvalReport;
use crate::measures::{Diagnostics, MeasureId, MeasureVector, Measured, SearchKind, SigmaSearchResult};
use crate::model::Axis;

use super::atomic_write;

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::Results {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// `measure,value,defined,reason` rows in catalog order. Undefined values
/// leave the value column empty.
pub fn measure_rows(mv: &MeasureVector) -> String {
    let mut s = String::from("measure,value,defined,reason\n");
    for (id, m) in mv.iter() {
        let value = if m.defined { m.value.to_string() } else { String::new() };
        let reason = m.reason.as_deref().unwrap_or("");
        writeln!(s, "{},{value},{},{reason}", id.as_str(), m.defined).unwrap();
    }
    s
}

/// Two-column `measure,value` form with `NA` for undefined entries.
pub fn measure_key_values(mv: &MeasureVector) -> String {
    let mut s = String::from("measure,value\n");
    for (id, m) in mv.iter() {
        match m.get() {
            Some(v) => writeln!(s, "{},{v}", id.as_str()).unwrap(),
            None => writeln!(s, "{},NA", id.as_str()).unwrap(),
        }
    }
    s
}

pub fn parse_measure_rows(text: &str, path: &Path) -> Result<MeasureVector> {
    let mut lines = text.lines();
    if lines.next() != Some("measure,value,defined,reason") {
        return Err(malformed(path, "missing header"));
    }
    let mut mv = MeasureVector::default();
    let mut seen = 0;
    for line in lines {
        let f: Vec<&str> = line.splitn(4, ',').collect();
        if f.len() != 4 {
            return Err(malformed(path, format!("bad row {line:?}")));
        }
        let id = MeasureId::parse(f[0]).ok_or_else(|| malformed(path, format!("unknown measure {}", f[0])))?;
        let m = match f[2] {
            "true" => Measured::value(f[1].parse().map_err(|_| malformed(path, format!("bad value {}", f[1])))?),
            "false" => Measured::undefined(f[3]),
            other => return Err(malformed(path, format!("bad flag {other}"))),
        };
        mv.set(id, m);
        seen += 1;
    }
    if seen != MeasureId::ALL.len() {
        return Err(malformed(path, format!("expected {} rows, found {seen}", MeasureId::ALL.len())));
    }
    Ok(mv)
}

pub fn write_measures(path: &Path, mv: &MeasureVector) -> Result<()> {
    atomic_write(path, measure_rows(mv).as_bytes())
}

pub fn read_measures(path: &Path) -> Result<MeasureVector> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_measure_rows(&text, path)
}

/// Serializable part of [`Diagnostics`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureDiagnostics {
    pub gamma: f64,
    pub input_bound: f64,
    pub searches: Vec<(SearchKind, SigmaSearchResult)>,
}

impl From<&Diagnostics> for MeasureDiagnostics {
    fn from(d: &Diagnostics) -> Self {
        MeasureDiagnostics {
            gamma: d.margin.gamma,
            input_bound: d.margin.input_bound,
            searches: d.searches.clone(),
        }
    }
}

// ---------------------------------------------------------------- reports

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Table {
    Kendall,
    Cmi,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Markdown,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(
        || "NA".to_string(),
        |x| {
            let s = format!("{x:.4}");
            // small negatives round to "-0.0000"
            if s.trim_start_matches('-').bytes().all(|b| b == b'0' || b == b'.') {
                s.trim_start_matches('-').to_string()
            } else {
                s
            }
        },
    )
}

fn table_rows(report: &EvalReport, table: Table) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["measure".to_string()];
    header.extend(Axis::ALL.iter().map(|a| a.name().to_string()));
    let mut rows = Vec::new();
    match table {
        Table::Kendall => {
            header.extend(["overall_tau".into(), "psi".into()]);
            for r in &report.rows {
                let mut row = vec![r.name.clone()];
                row.extend(r.axes.iter().map(|a| cell(a.psi)));
                row.extend([cell(r.tau), cell(r.psi)]);
                rows.push(row);
            }
            let mut row = vec!["canonical".to_string()];
            row.extend(report.canonical.iter().map(|&v| cell(v)));
            row.extend(["NA".into(), "NA".into()]);
            rows.push(row);
        }
        Table::Cmi => {
            header.extend(["s0".into(), "s1_min".into(), "s2_min".into(), "k".into()]);
            for r in &report.rows {
                let mut row = vec![r.name.clone()];
                match &r.cmi {
                    Some(c) => {
                        row.extend(c.per_axis.iter().map(|&v| cell(v)));
                        row.extend([c.unconditioned, c.min_size_one, c.min_size_two, c.k].map(cell));
                    }
                    None => row.extend(std::iter::repeat_n("NA".to_string(), 11)),
                }
                rows.push(row);
            }
            let mut row = vec!["conditional_entropy".to_string()];
            row.extend(report.conditional_entropy.iter().map(|&v| cell(Some(v))));
            row.extend(std::iter::repeat_n("NA".to_string(), 4));
            rows.push(row);
        }
    }
    (header, rows)
}

pub fn render_table(report: &EvalReport, table: Table, format: Format) -> String {
    let (header, rows) = table_rows(report, table);
    let mut s = String::new();
    match format {
        Format::Csv => {
            writeln!(s, "{}", header.join(",")).unwrap();
            for r in rows {
                writeln!(s, "{}", r.join(",")).unwrap();
            }
        }
        Format::Markdown => {
            writeln!(s, "| {} |", header.join(" | ")).unwrap();
            writeln!(s, "|{}", "---|".repeat(header.len())).unwrap();
            for r in rows {
                writeln!(s, "| {} |", r.join(" | ")).unwrap();
            }
        }
    }
    s
}

pub fn write_report(dir: &Path, report: &EvalReport) -> Result<()> {
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    atomic_write(&dir.join(super::REPORT_JSON), json.as_bytes())?;
    atomic_write(
        &dir.join(super::REPORT_TAU),
        render_table(report, Table::Kendall, Format::Csv).as_bytes(),
    )?;
    atomic_write(
        &dir.join(super::REPORT_CMI),
        render_table(report, Table::Cmi, Format::Csv).as_bytes(),
    )
}

pub fn read_report(dir: &Path) -> Result<EvalReport> {
    let path = dir.join(super::REPORT_JSON);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| malformed(&path, e.to_string()))
}
