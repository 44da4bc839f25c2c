//! Result and profile CSV files, and run metadata.
//!
//! Floats are written in scientific notation with 17 significant digits,
//! which round-trips every finite `f64`; non-finite values appear as `NaN`,
//! `inf` or `-inf`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::CliError;
use crate::profiles::ProfileCurve;
use crate::solvers::{Method, StopReason};
use crate::twin::{EnsembleResultRow, ResultTable};

pub const RESULT_COLUMNS: [&str; 11] = [
    "seed_index",
    "method",
    "l",
    "kJ",
    "cost_final",
    "cost_best",
    "grad_norm_final",
    "step_norm_final",
    "rmse",
    "stop_reason",
    "cost_initial",
];

pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn csv_error(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("csv: {e}"))
}

pub fn write_results<W: Write>(out: W, rows: &[EnsembleResultRow]) -> Result<(), CliError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(RESULT_COLUMNS).map_err(csv_error)?;
    for r in rows {
        w.write_record([
            r.seed_index.to_string(),
            r.method.to_string(),
            r.function_evals.to_string(),
            r.jacobian_evals.to_string(),
            format_float(r.cost_final),
            format_float(r.cost_best),
            format_float(r.grad_norm_final),
            format_float(r.step_norm_final),
            format_float(r.rmse),
            r.stop_reason.to_string(),
            format_float(r.cost_initial),
        ])
        .map_err(csv_error)?;
    }
    w.flush().map_err(csv_error)
}

pub fn read_results<R: Read>(input: R) -> Result<ResultTable, CliError> {
    let bad = |m: String| CliError::Runtime(format!("results csv: {m}"));
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader.headers().map_err(csv_error)?.clone();
    if headers.iter().ne(RESULT_COLUMNS) {
        return Err(bad(format!("expected columns {}, got {}", RESULT_COLUMNS.join(","), headers.iter().collect::<Vec<_>>().join(","))));
    }
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(csv_error)?;
        let at = |i: usize| record.get(i).unwrap_or("");
        let ctx = |i: usize| format!("row {}, column {}: cannot parse `{}`", line + 2, RESULT_COLUMNS[i], at(i));
        let int = |i: usize| at(i).parse::<usize>().map_err(|_| bad(ctx(i)));
        let float = |i: usize| at(i).parse::<f64>().map_err(|_| bad(ctx(i)));
        rows.push(EnsembleResultRow {
            seed_index: int(0)?,
            method: at(1).parse::<Method>().map_err(|_| bad(ctx(1)))?,
            function_evals: int(2)?,
            jacobian_evals: int(3)?,
            cost_final: float(4)?,
            cost_best: float(5)?,
            grad_norm_final: float(6)?,
            step_norm_final: float(7)?,
            rmse: float(8)?,
            stop_reason: at(9).parse::<StopReason>().map_err(|_| bad(ctx(9)))?,
            cost_initial: float(10)?,
        });
    }
    if rows.is_empty() {
        return Err(bad("no rows".into()));
    }
    Ok(rows)
}

pub fn write_profile<W: Write>(out: W, curve: &ProfileCurve) -> Result<(), CliError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let mut header = vec!["x".to_string()];
    header.extend(curve.methods.iter().map(|m| m.to_string()));
    w.write_record(&header).map_err(csv_error)?;
    for (k, x) in curve.x.iter().enumerate() {
        let mut record = vec![format_float(*x)];
        record.extend(curve.fractions.iter().map(|f| format_float(f[k])));
        w.write_record(&record).map_err(csv_error)?;
    }
    w.flush().map_err(csv_error)
}

/// Parsed profile CSV: grid and one column per method.
pub fn read_profile<R: Read>(input: R) -> Result<(Vec<f64>, Vec<(Method, Vec<f64>)>), CliError> {
    let bad = |m: String| CliError::Runtime(format!("profile csv: {m}"));
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader.headers().map_err(csv_error)?.clone();
    if headers.get(0) != Some("x") || headers.len() < 2 {
        return Err(bad("expected `x` followed by method columns".into()));
    }
    let methods = headers
        .iter()
        .skip(1)
        .map(|h| h.parse::<Method>().map_err(bad))
        .collect::<Result<Vec<_>, _>>()?;
    let mut x = Vec::new();
    let mut columns = vec![Vec::new(); methods.len()];
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let values = record
            .iter()
            .map(|v| v.parse::<f64>().map_err(|_| bad(format!("cannot parse `{v}`"))))
            .collect::<Result<Vec<_>, _>>()?;
        x.push(values[0]);
        for (c, v) in columns.iter_mut().zip(&values[1..]) {
            c.push(*v);
        }
    }
    Ok((x, methods.into_iter().zip(columns).collect()))
}

/// Contents of `<prefix>_meta.json`. The `config` member is a complete,
/// resolved configuration: `run --config <prefix>_meta.json` replays the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunMetadata {
    pub version: String,
    pub config: ExperimentConfig,
    pub columns: Vec<String>,
    pub seeding: String,
    pub counting: String,
    pub rows: usize,
}

impl RunMetadata {
    pub fn new(config: ExperimentConfig, rows: usize) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config,
            columns: RESULT_COLUMNS.iter().map(|c| c.to_string()).collect(),
            seeding: "ChaCha8 seeded with base_seed; realization i uses stream (i << 8) | tag with \
                      tag 0 = reference, 1 = background, 2 = observations; a fixed reference uses index 0, \
                      a per-realization reference uses index i + 1"
                .into(),
            counting: "l counts residual evaluations and kJ Jacobian evaluations, both including the \
                       start point; a Jacobian is evaluated only at accepted points; a trial is started \
                       only if kJ + l + 2 <= tau_e"
                .into(),
            rows,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("metadata serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}
