//! Result artifacts: one JSON document plus optional CSV series.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use renewal_spectra::stats::Estimate;
use serde::Serialize;
use serde_json::Value as Json;

use crate::CliError;

pub const RESULT_SCHEMA: &str = "rspec-result/1";
pub const CSV_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Exact,
    Quadrature,
    Mc,
}

/// One reported number. Monte Carlo values always carry `se` and `n`.
#[derive(Debug, Clone, Serialize)]
pub struct Quantity {
    pub name: String,
    pub value: f64,
    pub provenance: Provenance,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub se: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
}

impl Quantity {
    pub fn det(name: impl Into<String>, value: f64, provenance: Provenance) -> Self {
        Quantity { name: name.into(), value, provenance, se: None, n: None }
    }

    pub fn mc(name: impl Into<String>, e: &Estimate) -> Self {
        Quantity { name: name.into(), value: e.value, provenance: Provenance::Mc, se: Some(e.se), n: Some(e.n) }
    }
}

#[derive(Debug, Clone)]
pub struct CsvSeries {
    pub name: &'static str,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl CsvSeries {
    pub fn new(name: &'static str, header: &[&'static str]) -> Self {
        CsvSeries { name, header: header.to_vec(), rows: Vec::new() }
    }

    pub fn push<I: IntoIterator<Item = String>>(&mut self, row: I) {
        self.rows.push(row.into_iter().collect());
    }

    pub fn file_name(&self) -> String {
        format!("{}.csv", self.name)
    }
}

/// Formats a float so that it parses back to the same value.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:?}")
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

#[derive(Debug, Clone, Serialize)]
struct CsvRef {
    name: String,
    file: String,
    schema_version: u32,
    columns: Vec<&'static str>,
    rows: usize,
}

#[derive(Debug, Clone, Serialize)]
struct Document<'a> {
    schema: &'static str,
    command: &'a str,
    version: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    generated_unix_s: Option<u64>,
    inputs: &'a Json,
    quantities: &'a [Quantity],
    results: &'a Json,
    csv: Vec<CsvRef>,
    warnings: &'a [String],
}

/// What a command hands back to `main`.
#[derive(Debug, Default)]
pub struct Outcome {
    pub quantities: Vec<Quantity>,
    pub results: Json,
    pub series: Vec<CsvSeries>,
    pub warnings: Vec<String>,
}

pub struct Sink<'a> {
    pub out: Option<&'a Path>,
    pub csv_dir: Option<&'a Path>,
    pub timestamp: bool,
}

pub fn write(command: &str, inputs: &Json, outcome: &Outcome, sink: &Sink) -> Result<(), CliError> {
    let csv = if sink.csv_dir.is_some() {
        outcome
            .series
            .iter()
            .map(|s| CsvRef {
                name: s.name.to_string(),
                file: s.file_name(),
                schema_version: CSV_SCHEMA_VERSION,
                columns: s.header.clone(),
                rows: s.rows.len(),
            })
            .collect()
    } else {
        Vec::new()
    };
    let generated_unix_s =
        sink.timestamp.then(|| SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0));
    let doc = Document {
        schema: RESULT_SCHEMA,
        command,
        version: renewal_spectra::VERSION,
        generated_unix_s,
        inputs,
        quantities: &outcome.quantities,
        results: &outcome.results,
        csv,
        warnings: &outcome.warnings,
    };
    let mut text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Other(e.to_string()))?;
    text.push('\n');
    match sink.out {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Other(format!("{}: {e}", p.display())))?,
        None => std::io::stdout().write_all(text.as_bytes()).map_err(|e| CliError::Other(e.to_string()))?,
    }
    if let Some(dir) = sink.csv_dir {
        fs::create_dir_all(dir).map_err(|e| CliError::Other(format!("{}: {e}", dir.display())))?;
        for s in &outcome.series {
            write_csv(&dir.join(s.file_name()), s)?;
        }
    }
    Ok(())
}

fn write_csv(path: &Path, s: &CsvSeries) -> Result<(), CliError> {
    let err = |e: csv::Error| CliError::Other(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(&s.header).map_err(err)?;
    for r in &s.rows {
        w.write_record(r).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::Other(format!("{}: {e}", path.display())))
}
