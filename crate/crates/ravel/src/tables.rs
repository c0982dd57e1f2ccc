//! CSV files: feature matrices, predictions, benchmark results and
//! consistency violations.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use ravel_core::bench::{ExperimentCell, PredictionSet, TestConfig, TrainConfig};
use ravel_core::consistency::Violation;
use ravel_core::{FeatureVector, SeverityLabel, FEATURE_DIM};

use crate::{Error, Result};

/// One row of a feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub sample_id: String,
    pub label: SeverityLabel,
    pub features: FeatureVector,
}

fn create(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

fn open(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => Error::parse(path, line, format!("{kind:?}")),
    }
}

fn write_row<W: Write>(w: &mut csv::Writer<W>, path: &Path, row: &[String]) -> Result<()> {
    w.write_record(row).map_err(|e| csv_error(path, e))
}

fn finish<W: Write>(mut w: csv::Writer<W>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn check_header<R: Read>(r: &mut csv::Reader<R>, path: &Path, want: &[&str]) -> Result<bool> {
    let header = r.headers().map_err(|e| csv_error(path, e))?;
    if header.is_empty() {
        return Ok(false);
    }
    if header.iter().ne(want.iter().copied()) {
        return Err(Error::parse(path, 1, format!("expected header `{}`", want.join(","))));
    }
    Ok(true)
}

fn parse_label(path: &Path, line: usize, s: &str) -> Result<SeverityLabel> {
    s.parse()
        .map_err(|_| Error::parse(path, line, format!("unknown label `{s}`")))
}

fn feature_header() -> Vec<String> {
    let mut h: Vec<String> = (0..FEATURE_DIM).map(|i| format!("f{i:03}")).collect();
    h.push("sample_id".into());
    h.push("label".into());
    h
}

pub fn write_features(rows: &[FeatureRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    write_row(&mut w, path, &feature_header())?;
    for r in rows {
        let mut rec: Vec<String> = r.features.as_slice().iter().map(|x| x.to_string()).collect();
        rec.push(r.sample_id.clone());
        rec.push(r.label.to_string());
        write_row(&mut w, path, &rec)?;
    }
    finish(w, path)
}

pub fn read_features(path: impl AsRef<Path>) -> Result<Vec<FeatureRow>> {
    let path = path.as_ref();
    let mut r = open(path)?;
    let header = feature_header();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    if !check_header(&mut r, path, &header)? {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let values = rec
            .iter()
            .take(FEATURE_DIM)
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::parse(path, line, format!("bad number `{s}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let features = FeatureVector::new(values).map_err(|e| Error::parse(path, line, e))?;
        out.push(FeatureRow {
            sample_id: rec[FEATURE_DIM].to_string(),
            label: parse_label(path, line, &rec[FEATURE_DIM + 1])?,
            features,
        });
    }
    Ok(out)
}

pub fn write_predictions(predictions: &PredictionSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    write_row(&mut w, path, &["sample_id".into(), "label".into()])?;
    for (id, label) in &predictions.entries {
        write_row(&mut w, path, &[id.clone(), label.to_string()])?;
    }
    finish(w, path)
}

/// Imports `sample_id,label` rows. An empty file is an empty set.
pub fn read_predictions(path: impl AsRef<Path>, model_name: &str) -> Result<PredictionSet> {
    let path = path.as_ref();
    let mut r = open(path)?;
    let mut set = PredictionSet::new(model_name);
    if !check_header(&mut r, path, &["sample_id", "label"])? {
        return Ok(set);
    }
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let label = parse_label(path, line, &rec[1])?;
        if set.entries.contains_key(&rec[0]) {
            return Err(Error::parse(path, line, format!("duplicate sample_id `{}`", &rec[0])));
        }
        set.entries.insert(rec[0].to_string(), label);
    }
    Ok(set)
}

pub const RESULTS_HEADER: [&str; 5] = ["train_config", "test_config", "accuracy", "n", "seed"];

pub fn write_results(cells: &[ExperimentCell], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    write_row(&mut w, path, &RESULTS_HEADER.map(String::from))?;
    for c in cells {
        let rec = [
            c.train.label(),
            c.test.label(),
            c.accuracy.to_string(),
            c.sample_count.to_string(),
            c.seed.to_string(),
        ];
        write_row(&mut w, path, &rec)?;
    }
    finish(w, path)
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ExperimentCell>> {
    let path = path.as_ref();
    let mut r = open(path)?;
    if !check_header(&mut r, path, &RESULTS_HEADER)? {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let bad = |what: &str| Error::parse(path, line, format!("bad {what}"));
        let accuracy: f64 = rec[2].parse().map_err(|_| bad("accuracy"))?;
        if !(0.0..=1.0).contains(&accuracy) {
            return Err(bad("accuracy"));
        }
        out.push(ExperimentCell {
            train: TrainConfig::from_label(&rec[0]).ok_or_else(|| bad("train_config"))?,
            test: TestConfig::from_label(&rec[1]).ok_or_else(|| bad("test_config"))?,
            accuracy,
            sample_count: rec[3].parse().map_err(|_| bad("n"))?,
            seed: rec[4].parse().map_err(|_| bad("seed"))?,
        });
    }
    Ok(out)
}

pub fn write_violations(violations: &[Violation], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let header = ["location_key", "year_from", "year_to", "label_from", "label_to"];
    write_row(&mut w, path, &header.map(String::from))?;
    for v in violations {
        let rec = [
            v.location_key.clone(),
            v.year_from.to_string(),
            v.year_to.to_string(),
            v.label_from.to_string(),
            v.label_to.to_string(),
        ];
        write_row(&mut w, path, &rec)?;
    }
    finish(w, path)
}
