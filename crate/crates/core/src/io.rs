//! Reading datasets and predictions, writing paths, traces and logs.
//!
//! Row numbers in errors are file line numbers, with the header on line 1.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::betting::MartingalePath;
use crate::conformity::{Observation, PredictionRecord};
use crate::detectors::TraceRow;
use crate::error::{Error, Result};
use crate::schedules::FoldSnapshot;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub label_name: String,
    pub observations: Vec<Observation>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.feature_names.len()
    }
}

pub fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn parse_error(source: &Path, row: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: source.to_path_buf(),
        row,
        message: message.into(),
    }
}

fn parse_cell(source: &Path, row: usize, column: &str, cell: &str) -> Result<f64> {
    let v: f64 = cell.trim().parse().map_err(|_| {
        parse_error(
            source,
            row,
            format!("column '{column}': '{cell}' is not a number"),
        )
    })?;
    if !v.is_finite() {
        return Err(parse_error(
            source,
            row,
            format!("column '{column}': non-finite value"),
        ));
    }
    Ok(v)
}

fn csv_reader<R: Read>(reader: R, delimiter: u8) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader)
}

/// Parses rows of features plus a label column into observations.
///
/// Every column other than `label_column` and `extra_columns` is a
/// feature, in file order.
pub struct ObservationReader<R: Read> {
    source: PathBuf,
    records: csv::StringRecordsIntoIter<R>,
    width: usize,
    label_idx: usize,
    feature_idx: Vec<usize>,
    extra_idx: Vec<usize>,
    feature_names: Vec<String>,
    label_name: String,
    extra_names: Vec<String>,
}

impl<R: Read> ObservationReader<R> {
    pub fn new(
        reader: R,
        source: impl Into<PathBuf>,
        delimiter: u8,
        label_column: &str,
        extra_columns: &[&str],
    ) -> Result<Self> {
        let source = source.into();
        let mut rdr = csv_reader(reader, delimiter);
        let headers: Vec<String> = rdr
            .headers()
            .map_err(|e| parse_error(&source, 1, e.to_string()))?
            .iter()
            .map(|h| h.trim_matches('"').to_string())
            .collect();
        if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
            return Err(parse_error(&source, 1, "missing header row"));
        }
        let find = |name: &str| headers.iter().position(|h| h == name);
        let label_idx = find(label_column)
            .ok_or_else(|| parse_error(&source, 1, format!("no label column '{label_column}'")))?;
        let extra_idx = extra_columns
            .iter()
            .map(|c| find(c).ok_or_else(|| parse_error(&source, 1, format!("no column '{c}'"))))
            .collect::<Result<Vec<_>>>()?;
        let feature_idx: Vec<usize> = (0..headers.len())
            .filter(|i| *i != label_idx && !extra_idx.contains(i))
            .collect();
        Ok(Self {
            feature_names: feature_idx.iter().map(|&i| headers[i].clone()).collect(),
            label_name: headers[label_idx].clone(),
            extra_names: extra_columns.iter().map(|c| c.to_string()).collect(),
            width: headers.len(),
            label_idx,
            feature_idx,
            extra_idx,
            source,
            records: rdr.into_records(),
        })
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn label_name(&self) -> &str {
        &self.label_name
    }

    /// Next observation with the raw text of the extra columns and the
    /// file line it came from.
    pub fn next_row(&mut self) -> Option<Result<(Observation, Vec<String>, usize)>> {
        let record = self.records.next()?;
        Some(self.parse(record))
    }

    fn parse(
        &self,
        record: csv::Result<csv::StringRecord>,
    ) -> Result<(Observation, Vec<String>, usize)> {
        let record = record.map_err(|e| {
            let row = e.position().map_or(0, |p| p.line() as usize);
            parse_error(&self.source, row, e.to_string())
        })?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != self.width {
            return Err(parse_error(
                &self.source,
                row,
                format!("expected {} fields, found {}", self.width, record.len()),
            ));
        }
        let features = self
            .feature_idx
            .iter()
            .zip(&self.feature_names)
            .map(|(&i, name)| parse_cell(&self.source, row, name, &record[i]))
            .collect::<Result<Vec<_>>>()?;
        let label = parse_cell(&self.source, row, &self.label_name, &record[self.label_idx])?;
        let extras = self
            .extra_idx
            .iter()
            .map(|&i| record[i].to_string())
            .collect();
        Ok((Observation::new(features, label), extras, row))
    }

    pub fn extra_names(&self) -> &[String] {
        &self.extra_names
    }
}

pub fn read_dataset<R: Read>(
    reader: R,
    source: impl Into<PathBuf>,
    delimiter: u8,
    label_column: &str,
) -> Result<Dataset> {
    let mut rows = ObservationReader::new(reader, source, delimiter, label_column, &[])?;
    let mut observations = Vec::new();
    while let Some(row) = rows.next_row() {
        observations.push(row?.0);
    }
    Ok(Dataset {
        feature_names: rows.feature_names.clone(),
        label_name: rows.label_name.clone(),
        observations,
    })
}

pub fn load_dataset(path: &Path, delimiter: u8, label_column: &str) -> Result<Dataset> {
    read_dataset(BufReader::new(open(path)?), path, delimiter, label_column)
}

/// Reads `y_hat` and/or `y_hat_1..y_hat_m` columns.
pub fn read_predictions<R: Read>(
    reader: R,
    source: impl Into<PathBuf>,
    delimiter: u8,
) -> Result<Vec<PredictionRecord>> {
    let source = source.into();
    let mut rdr = csv_reader(reader, delimiter);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_error(&source, 1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let point_idx = headers.iter().position(|h| h == "y_hat");
    let mut members: Vec<(usize, usize)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| {
            h.strip_prefix("y_hat_")
                .and_then(|j| j.parse::<usize>().ok())
                .map(|j| (j, i))
        })
        .collect();
    members.sort();
    if members.iter().enumerate().any(|(k, (j, _))| *j != k + 1) {
        return Err(parse_error(
            &source,
            1,
            "ensemble columns must be y_hat_1..y_hat_m",
        ));
    }
    if point_idx.is_none() && members.is_empty() {
        return Err(parse_error(&source, 1, "no y_hat or y_hat_<j> columns"));
    }
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            parse_error(
                &source,
                e.position().map_or(0, |p| p.line() as usize),
                e.to_string(),
            )
        })?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != headers.len() {
            return Err(parse_error(
                &source,
                row,
                format!("expected {} fields, found {}", headers.len(), record.len()),
            ));
        }
        let ensemble = members
            .iter()
            .map(|&(_, i)| parse_cell(&source, row, &headers[i], &record[i]))
            .collect::<Result<Vec<_>>>()?;
        let rec = match point_idx {
            Some(i) => PredictionRecord {
                point: Some(parse_cell(&source, row, "y_hat", &record[i])?),
                ensemble: (!ensemble.is_empty()).then_some(ensemble),
            },
            None => PredictionRecord::ensemble(ensemble),
        };
        rec.validate()
            .map_err(|e| parse_error(&source, row, e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn load_predictions(path: &Path, delimiter: u8) -> Result<Vec<PredictionRecord>> {
    read_predictions(BufReader::new(open(path)?), path, delimiter)
}

/// Writes `step,log10_s`, plus a `test` column (0 before the change point,
/// 1 from it on) when `change_point` is given.
pub fn write_path_csv<W: Write>(
    writer: W,
    path: &MartingalePath,
    change_point: Option<usize>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    match change_point {
        Some(_) => w.write_record(["step", "log10_s", "test"])?,
        None => w.write_record(["step", "log10_s"])?,
    }
    for (n, v) in path.log10_values().enumerate() {
        let mut row = vec![n.to_string(), v.to_string()];
        if let Some(cp) = change_point {
            row.push(u8::from(n > cp).to_string());
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<path csv>", e))?;
    Ok(())
}

/// Reads a path written by [`write_path_csv`]; returns the path and the
/// change point if a `test` column is present.
pub fn read_path_csv<R: Read>(
    reader: R,
    source: impl Into<PathBuf>,
) -> Result<(MartingalePath, Option<usize>)> {
    let source = source.into();
    let mut rdr = csv_reader(reader, b',');
    let headers = rdr.headers()?.clone();
    let has_test = match headers.iter().collect::<Vec<_>>().as_slice() {
        ["step", "log10_s"] => false,
        ["step", "log10_s", "test"] => true,
        _ => {
            return Err(parse_error(
                &source,
                1,
                "expected header step,log10_s[,test]",
            ))
        }
    };
    let mut log_values = Vec::new();
    let mut change_point = None;
    for (k, record) in rdr.records().enumerate() {
        let record = record?;
        let row = k + 2;
        let step: usize = record[0]
            .parse()
            .map_err(|_| parse_error(&source, row, "bad step"))?;
        if step != k {
            return Err(parse_error(
                &source,
                row,
                format!("expected step {k}, found {step}"),
            ));
        }
        log_values.push(parse_cell(&source, row, "log10_s", &record[1])? * std::f64::consts::LN_10);
        if has_test && change_point.is_none() && &record[2] == "1" {
            change_point = Some(k - 1);
        }
    }
    if has_test && change_point.is_none() {
        change_point = Some(log_values.len().saturating_sub(1));
    }
    Ok((MartingalePath { log_values }, change_point))
}

pub fn write_trace_csv<W: Write>(writer: W, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    if rows.is_empty() {
        w.write_record(["step", "log10_s", "gamma", "psi", "psi_star"])?;
    }
    w.flush().map_err(|e| Error::io("<trace csv>", e))?;
    Ok(())
}

/// Per-fold schedule trace (`fold,step,log10_s,gamma,psi`).
pub struct FoldTraceWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> FoldTraceWriter<W> {
    pub fn new(writer: W) -> Result<Self> {
        let mut inner = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(writer);
        inner.write_record(["fold", "step", "log10_s", "gamma", "psi"])?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, rows: &[FoldSnapshot]) -> Result<()> {
        for r in rows {
            self.inner.serialize(r)?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush().map_err(|e| Error::io("<fold trace>", e))
    }
}

/// One JSON value per line, flushed after each record.
pub struct JsonlWriter<W: Write> {
    inner: W,
}

impl<W: Write> JsonlWriter<W> {
    pub fn new(inner: W) -> Self {
        Self { inner }
    }

    pub fn write<T: Serialize>(&mut self, value: &T) -> Result<()> {
        serde_json::to_writer(&mut self.inner, value)?;
        self.inner
            .write_all(b"\n")
            .and_then(|_| self.inner.flush())
            .map_err(|e| Error::io("<jsonl>", e))
    }
}

/// Opens `path` for appending, creating it if needed.
pub fn append(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

/// Reads non-empty lines, e.g. JSONL logs.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    BufReader::new(open(path)?)
        .lines()
        .filter(|l| !matches!(l, Ok(s) if s.trim().is_empty()))
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(path, e))
}
