use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DataIoError;
use crate::nlls::RunReport;

pub const REPORT_SCHEMA: &str = "broyden-lm.report.v1";

/// Header of the per-iteration CSV trace.
pub const TRACE_COLUMNS: [&str; 8] = [
    "k",
    "objective",
    "residual_norm",
    "lambda",
    "alpha",
    "p_norm",
    "max_rel_change",
    "armijo_satisfied",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    /// The whole report as JSON; reads back losslessly.
    Json,
    /// One CSV row per iteration.
    CsvTrace,
}

#[derive(Serialize)]
struct Envelope<'a> {
    schema: &'a str,
    report: &'a RunReport<f64>,
}

#[derive(Deserialize)]
struct OwnedEnvelope {
    schema: String,
    report: RunReport<f64>,
}

pub fn report_to_json(report: &RunReport<f64>) -> String {
    serde_json::to_string_pretty(&Envelope {
        schema: REPORT_SCHEMA,
        report,
    })
    .expect("reports serialize")
}

pub fn report_from_json(text: &str) -> Result<RunReport<f64>, DataIoError> {
    let parse_err = |e: serde_json::Error| DataIoError::Parse {
        source_name: "report".into(),
        line: e.line() as u64,
        message: e.to_string(),
    };
    let env: OwnedEnvelope = serde_json::from_str(text).map_err(parse_err)?;
    if env.schema != REPORT_SCHEMA {
        return Err(DataIoError::config(
            "schema",
            format!("expected \"{REPORT_SCHEMA}\", found \"{}\"", env.schema),
        ));
    }
    Ok(env.report)
}

/// Writes the trace; floats use the shortest representation that reads
/// back to the same value.
pub fn write_csv_trace<W: Write>(report: &RunReport<f64>, out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_COLUMNS)?;
    for r in &report.iterations {
        w.write_record([
            r.k.to_string(),
            format!("{:?}", r.objective),
            format!("{:?}", r.residual_norm),
            format!("{:?}", r.lambda),
            format!("{:?}", r.alpha),
            format!("{:?}", r.p_norm),
            format!("{:?}", r.max_rel_change),
            r.armijo_satisfied.to_string(),
        ])?;
    }
    w.flush()
}

pub fn write_report(
    report: &RunReport<f64>,
    path: impl AsRef<Path>,
    format: ReportFormat,
) -> Result<(), DataIoError> {
    let path = path.as_ref();
    let io_err = |source| DataIoError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io_err)?;
    let mut out = BufWriter::new(file);
    match format {
        ReportFormat::Json => {
            out.write_all(report_to_json(report).as_bytes())
                .and_then(|()| out.write_all(b"\n"))
                .map_err(io_err)?;
        }
        ReportFormat::CsvTrace => write_csv_trace(report, &mut out).map_err(io_err)?,
    }
    out.flush().map_err(io_err)
}

pub fn read_report(path: impl AsRef<Path>) -> Result<RunReport<f64>, DataIoError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| DataIoError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    report_from_json(&text).map_err(|e| match e {
        DataIoError::Parse { line, message, .. } => DataIoError::Parse {
            source_name: path.display().to_string(),
            line,
            message,
        },
        other => other,
    })
}
