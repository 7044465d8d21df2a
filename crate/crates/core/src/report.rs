//! Result rows and their CSV/JSON files.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};

/// Column order of the CSV report.
pub const COLUMNS: [&str; 11] = [
    "run_id",
    "seed",
    "transfer_regime",
    "loss_regime",
    "epochs",
    "train_loss",
    "val_loss",
    "top1",
    "top2",
    "macro_f1",
    "seconds",
];

fn six_digits<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(round6(*v))
}

fn round6(v: f64) -> f64 {
    format!("{v:.6}").parse().expect("formatted float parses")
}

/// One training run (or one ensemble) and its held-out results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportRow {
    pub run_id: String,
    pub seed: u64,
    pub transfer_regime: String,
    pub loss_regime: String,
    /// Epochs run before stopping.
    pub epochs: usize,
    #[serde(serialize_with = "six_digits")]
    pub train_loss: f64,
    #[serde(serialize_with = "six_digits")]
    pub val_loss: f64,
    #[serde(serialize_with = "six_digits")]
    pub top1: f64,
    #[serde(serialize_with = "six_digits")]
    pub top2: f64,
    #[serde(serialize_with = "six_digits")]
    pub macro_f1: f64,
    #[serde(serialize_with = "six_digits")]
    pub seconds: f64,
}

impl ReportRow {
    /// The row as it reads back from a report file.
    pub fn rounded(&self) -> ReportRow {
        ReportRow {
            train_loss: round6(self.train_loss),
            val_loss: round6(self.val_loss),
            top1: round6(self.top1),
            top2: round6(self.top2),
            macro_f1: round6(self.macro_f1),
            seconds: round6(self.seconds),
            ..self.clone()
        }
    }

    /// Equality on everything except wall-clock time.
    pub fn same_results(&self, other: &ReportRow) -> bool {
        ReportRow {
            seconds: 0.0,
            ..self.clone()
        } == ReportRow {
            seconds: 0.0,
            ..other.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    /// Guesses the format from a `.csv` or `.json` extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(ReportFormat::Csv),
            "json" => Some(ReportFormat::Json),
            _ => None,
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::InvalidArgument(format!(
                "report format {other:?}, expected csv or json"
            ))),
        }
    }
}

pub fn render_csv(rows: &[ReportRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(COLUMNS)?;
    for r in rows {
        w.write_record([
            r.run_id.clone(),
            r.seed.to_string(),
            r.transfer_regime.clone(),
            r.loss_regime.clone(),
            r.epochs.to_string(),
            format!("{:.6}", r.train_loss),
            format!("{:.6}", r.val_loss),
            format!("{:.6}", r.top1),
            format!("{:.6}", r.top2),
            format!("{:.6}", r.macro_f1),
            format!("{:.6}", r.seconds),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io("<csv buffer>", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn parse_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers()?.clone();
    if headers.iter().ne(COLUMNS) {
        return Err(Error::Parse(format!(
            "report header {:?} differs from {COLUMNS:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn render_json(rows: &[ReportRow]) -> Result<String> {
    Ok(serde_json::to_string_pretty(rows)?)
}

pub fn parse_json(text: &str) -> Result<Vec<ReportRow>> {
    Ok(serde_json::from_str(text)?)
}

/// Writes `rows` to `path`. An empty row set is an error and leaves no file.
pub fn emit_report(rows: &[ReportRow], path: &Path, format: ReportFormat) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no report rows to write".into()));
    }
    let text = match format {
        ReportFormat::Csv => render_csv(rows)?,
        ReportFormat::Json => render_json(rows)?,
    };
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_report(path: &Path, format: ReportFormat) -> Result<Vec<ReportRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        ReportFormat::Csv => parse_csv(&text),
        ReportFormat::Json => parse_json(&text),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row() -> ReportRow {
        ReportRow {
            run_id: "combined-scratch-s3".into(),
            seed: 3,
            transfer_regime: "scratch".into(),
            loss_regime: "combined".into(),
            epochs: 9,
            train_loss: 0.123_456_789,
            val_loss: 1.0 / 3.0,
            top1: 0.8321,
            top2: 0.95,
            macro_f1: 0.832_749_99,
            seconds: 12.000_000_4,
        }
    }

    #[test]
    fn one_row_is_two_lines() {
        let text = render_csv(&[row()]).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], COLUMNS.join(","));
        assert_eq!(
            lines[1],
            "combined-scratch-s3,3,scratch,combined,9,0.123457,0.333333,0.832100,0.950000,0.832750,12.000000"
        );
    }

    #[test]
    fn csv_then_json_round_trip() {
        let from_csv = parse_csv(&render_csv(&[row(), row()]).unwrap()).unwrap();
        assert_eq!(from_csv, vec![row().rounded(); 2]);
        let from_json = parse_json(&render_json(&from_csv).unwrap()).unwrap();
        assert_eq!(from_json, from_csv);
    }

    #[test]
    fn empty_rows_write_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        assert!(emit_report(&[], &path, ReportFormat::Csv).is_err());
        assert!(!path.exists());
    }

    #[test]
    fn unwritable_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("missing").join("r.json");
        assert!(matches!(
            emit_report(&[row()], &path, ReportFormat::Json),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn format_detection() {
        assert_eq!(ReportFormat::from_path(Path::new("a/b.CSV")), Some(ReportFormat::Csv));
        assert_eq!(ReportFormat::from_path(Path::new("b.json")), Some(ReportFormat::Json));
        assert_eq!(ReportFormat::from_path(Path::new("b.txt")), None);
        assert!("xml".parse::<ReportFormat>().is_err());
    }
}
