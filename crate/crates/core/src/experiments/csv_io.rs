use std::path::Path;

use super::{Case, SweepRow};
use crate::error::{Error, Result};

/// Column order of sweep CSV files.
pub const CSV_HEADER: [&str; 11] = [
    "seed",
    "case",
    "knob",
    "g_s",
    "g_f",
    "safety_bound",
    "capability_bound",
    "safety_slack",
    "capability_slack",
    "iterations",
    "converged",
];

// `{}` on f64 prints the shortest string that parses back to the same value,
// and "inf" for infinity.
fn record(row: &SweepRow) -> [String; 11] {
    [
        row.seed.to_string(),
        row.case.to_string(),
        row.knob.to_string(),
        row.g_s.to_string(),
        row.g_f.to_string(),
        row.safety_bound.to_string(),
        row.capability_bound.to_string(),
        row.safety_slack.to_string(),
        row.capability_slack.to_string(),
        row.iterations.to_string(),
        row.converged.to_string(),
    ]
}

pub fn rows_to_csv(rows: &[SweepRow]) -> Result<String> {
    let mut w = ::csv::Writer::from_writer(Vec::new());
    let csv_err = |e: ::csv::Error| Error::Parse(e.to_string());
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for row in rows {
        w.write_record(record(row)).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv of ascii fields"))
}

fn field<T: std::str::FromStr>(rec: &::csv::StringRecord, line: usize, col: usize) -> Result<T> {
    let raw = rec.get(col).unwrap_or_default();
    raw.parse().map_err(|_| {
        Error::validation(
            format!("line {line}, column {}", CSV_HEADER[col]),
            format!("cannot parse {raw:?}"),
        )
    })
}

pub fn rows_from_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut r = ::csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| Error::Parse(e.to_string()))?;
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Parse(format!(
            "unexpected CSV header; want {}",
            CSV_HEADER.join(",")
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        let line = i + 2;
        rows.push(SweepRow {
            seed: field(&rec, line, 0)?,
            case: rec
                .get(1)
                .unwrap_or_default()
                .parse::<Case>()
                .map_err(|e| {
                    Error::validation(format!("line {line}, column case"), e.to_string())
                })?,
            knob: field(&rec, line, 2)?,
            g_s: field(&rec, line, 3)?,
            g_f: field(&rec, line, 4)?,
            safety_bound: field(&rec, line, 5)?,
            capability_bound: field(&rec, line, 6)?,
            safety_slack: field(&rec, line, 7)?,
            capability_slack: field(&rec, line, 8)?,
            iterations: field(&rec, line, 9)?,
            converged: field(&rec, line, 10)?,
        });
    }
    Ok(rows)
}

pub fn write_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    std::fs::write(path, rows_to_csv(rows)?).map_err(|e| Error::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    rows_from_csv(&text)
}
