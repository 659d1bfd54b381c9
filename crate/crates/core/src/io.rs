//! CSV formats: wide functional samples, selection traces, Monte Carlo results.
//!
//! Floats are written with 17 significant digits so every file re-parses to
//! the exact values that produced it.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{FflqrError, Result};
use crate::fdata::{FunctionalSample, Grid};
use crate::selection::TraceEntry;
use crate::uncertainty::{quantile_type7, MetricsReport};

pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_float(field: &str, source: &str, line: usize) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| FflqrError::Parse {
        source_name: source.to_string(),
        message: format!("line {line}: `{field}` is not a number"),
    })
}

fn parse_err(source: &str, message: String) -> FflqrError {
    FflqrError::Parse {
        source_name: source.to_string(),
        message,
    }
}

/// Reads a wide-format sample: first line the grid points, then one curve per line.
pub fn read_sample<R: Read>(reader: R, source: &str) -> Result<FunctionalSample> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut points: Option<Vec<f64>> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = idx + 1;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        let vals = rec
            .iter()
            .map(|f| parse_float(f, source, line))
            .collect::<Result<Vec<f64>>>()?;
        match &points {
            None => points = Some(vals),
            Some(p) if p.len() != vals.len() => {
                return Err(parse_err(
                    source,
                    format!("line {line}: expected {} values, found {}", p.len(), vals.len()),
                ))
            }
            Some(_) => rows.push(vals),
        }
    }
    let points = points.ok_or_else(|| parse_err(source, "empty file".into()))?;
    if rows.is_empty() {
        return Err(parse_err(source, "no curves after the grid line".into()));
    }
    let grid = Grid::trapezoid(points).map_err(|e| parse_err(source, format!("grid line: {e}")))?;
    let p = grid.len();
    let values = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
    FunctionalSample::new(values, grid).map_err(|e| match e {
        FflqrError::NonFinite { row, col } => parse_err(
            source,
            format!("non-finite value on line {} column {}", row + 2, col + 1),
        ),
        other => other,
    })
}

pub fn read_sample_csv(path: &Path) -> Result<FunctionalSample> {
    let file = File::open(path).map_err(|e| parse_err(&path.display().to_string(), e.to_string()))?;
    read_sample(file, &path.display().to_string())
}

pub fn write_sample<W: Write>(writer: W, sample: &FunctionalSample) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(sample.grid().points().iter().map(|&v| format_float(v)))?;
    for row in sample.values().row_iter() {
        w.write_record(row.iter().map(|&v| format_float(v)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sample_csv(path: &Path, sample: &FunctionalSample) -> Result<()> {
    write_sample(BufWriter::new(File::create(path)?), sample)
}

fn opt_float(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

fn parse_opt_float(field: &str, source: &str, line: usize) -> Result<Option<f64>> {
    if field.trim().is_empty() {
        Ok(None)
    } else {
        parse_float(field, source, line).map(Some)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TraceRow {
    stage: usize,
    candidate: String,
    #[serde(rename = "K_Y")]
    k_y: usize,
    #[serde(rename = "K_X")]
    k_x: usize,
    #[serde(rename = "BIC")]
    bic: String,
    accepted: bool,
    note: String,
}

pub fn write_trace<W: Write>(writer: W, trace: &[TraceEntry]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for e in trace {
        w.serialize(TraceRow {
            stage: e.stage,
            candidate: e.candidate.clone(),
            k_y: e.k_y,
            k_x: e.k_x,
            bic: opt_float(e.bic),
            accepted: e.accepted,
            note: e.note.clone().unwrap_or_default(),
        })?;
    }
    if trace.is_empty() {
        w.write_record(["stage", "candidate", "K_Y", "K_X", "BIC", "accepted", "note"])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace_csv(path: &Path, trace: &[TraceEntry]) -> Result<()> {
    write_trace(BufWriter::new(File::create(path)?), trace)
}

/// Trace rows as `(stage, candidate, K_Y, K_X, BIC, accepted)`.
pub fn read_trace<R: Read>(
    reader: R,
    source: &str,
) -> Result<Vec<(usize, String, usize, usize, Option<f64>, bool)>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<TraceRow>().enumerate() {
        let row = row?;
        out.push((
            row.stage,
            row.candidate,
            row.k_y,
            row.k_x,
            parse_opt_float(&row.bic, source, i + 2)?,
            row.accepted,
        ));
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct ResultRow {
    seed: u64,
    replicate: usize,
    method: String,
    model: String,
    scenario: String,
    mspe: String,
    cpd: String,
    score: String,
    /// One-based indices joined by `;`.
    predictors: String,
    k_y: usize,
    k_x: usize,
}

pub fn write_results<W: Write>(writer: W, reports: &[MetricsReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in reports {
        w.serialize(ResultRow {
            seed: r.seed,
            replicate: r.replicate,
            method: r.method.clone(),
            model: r.model.clone(),
            scenario: r.scenario.clone(),
            mspe: format_float(r.mspe),
            cpd: opt_float(r.cpd),
            score: opt_float(r.score),
            predictors: r
                .predictors
                .iter()
                .map(|m| (m + 1).to_string())
                .collect::<Vec<_>>()
                .join(";"),
            k_y: r.k_y,
            k_x: r.k_x,
        })?;
    }
    if reports.is_empty() {
        w.write_record([
            "seed", "replicate", "method", "model", "scenario", "mspe", "cpd", "score", "predictors", "k_y", "k_x",
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_results_csv(path: &Path, reports: &[MetricsReport]) -> Result<()> {
    write_results(BufWriter::new(File::create(path)?), reports)
}

pub fn read_results<R: Read>(reader: R, source: &str) -> Result<Vec<MetricsReport>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<ResultRow>().enumerate() {
        let row = row?;
        let line = i + 2;
        let predictors = if row.predictors.is_empty() {
            Vec::new()
        } else {
            row.predictors
                .split(';')
                .map(|s| match s.trim().parse::<usize>() {
                    Ok(m) if m >= 1 => Ok(m - 1),
                    _ => Err(parse_err(source, format!("line {line}: bad predictor index `{s}`"))),
                })
                .collect::<Result<Vec<_>>>()?
        };
        out.push(MetricsReport {
            method: row.method,
            model: row.model,
            scenario: row.scenario,
            replicate: row.replicate,
            seed: row.seed,
            mspe: parse_float(&row.mspe, source, line)?,
            cpd: parse_opt_float(&row.cpd, source, line)?,
            score: parse_opt_float(&row.score, source, line)?,
            predictors,
            k_y: row.k_y,
            k_x: row.k_x,
        });
    }
    Ok(out)
}

pub fn read_results_csv(path: &Path) -> Result<Vec<MetricsReport>> {
    read_results(File::open(path)?, &path.display().to_string())
}

/// Median and interquartile range of one metric for one method and model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub method: String,
    pub model: String,
    pub metric: String,
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
}

fn metric_values(r: &MetricsReport) -> [(&'static str, Option<f64>); 3] {
    [("mspe", Some(r.mspe)), ("cpd", r.cpd), ("score", r.score)]
}

/// Groups reports by scenario, method, model and metric (sorted keys).
pub fn summarize(reports: &[MetricsReport]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, String, String, &'static str), Vec<f64>> = BTreeMap::new();
    for r in reports {
        for (metric, v) in metric_values(r) {
            if let Some(v) = v {
                groups
                    .entry((r.scenario.clone(), r.method.clone(), r.model.clone(), metric))
                    .or_default()
                    .push(v);
            }
        }
    }
    groups
        .into_iter()
        .map(|((scenario, method, model, metric), mut v)| {
            v.sort_by(f64::total_cmp);
            let q1 = quantile_type7(&v, 0.25);
            let q3 = quantile_type7(&v, 0.75);
            SummaryRow {
                scenario,
                method,
                model,
                metric: metric.to_string(),
                n: v.len(),
                median: quantile_type7(&v, 0.5),
                q1,
                q3,
                iqr: q3 - q1,
            }
        })
        .collect()
}

pub fn write_summary<W: Write>(writer: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["scenario", "method", "model", "metric", "n", "median", "q1", "q3", "iqr"])?;
    for r in rows {
        w.write_record([
            r.scenario.clone(),
            r.method.clone(),
            r.model.clone(),
            r.metric.clone(),
            r.n.to_string(),
            format_float(r.median),
            format_float(r.q1),
            format_float(r.q3),
            format_float(r.iqr),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    write_summary(BufWriter::new(File::create(path)?), rows)
}

/// One row per (report, metric): the plotting format.
pub fn write_long<W: Write>(writer: W, reports: &[MetricsReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["scenario", "method", "model", "replicate", "seed", "metric", "value"])?;
    for r in reports {
        for (metric, v) in metric_values(r) {
            if let Some(v) = v {
                w.write_record([
                    r.scenario.clone(),
                    r.method.clone(),
                    r.model.clone(),
                    r.replicate.to_string(),
                    r.seed.to_string(),
                    metric.to_string(),
                    format_float(v),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_long_csv(path: &Path, reports: &[MetricsReport]) -> Result<()> {
    write_long(BufWriter::new(File::create(path)?), reports)
}
