//! Comma-separated file schemas.
//!
//! | file        | header                                                        |
//! |-------------|---------------------------------------------------------------|
//! | labels      | `speaker_id,split,q1,...,q8,total,binary`                     |
//! | embeddings  | `speaker_id,group_index,e00,...,e63`                          |
//! | predictions | `speaker_id,system,total,binary,severity,q1,...,q8,expert`    |
//! | features    | `speaker_id,<feature>,...` (empty cell = missing)             |
//!
//! Items `q1..q8` follow [`Item::ALL`](crate::domain::Item::ALL). Reals are
//! written with Rust's shortest round-trip formatting, so reading a written
//! file reproduces every value bit for bit.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use csv::{ReaderBuilder, StringRecord, WriterBuilder};

use crate::domain::{
    Cohort, GroupEmbedding, Phq8Items, Prediction, PredictionSource, Severity, SpeakerLabel, Split, EMBEDDING_DIM,
    ITEM_COUNT,
};
use crate::error::{Error, Result};
use crate::metrics::FeatureTable;

pub fn label_header() -> Vec<String> {
    let mut h = vec!["speaker_id".to_string(), "split".to_string()];
    h.extend((1..=ITEM_COUNT).map(|k| format!("q{k}")));
    h.push("total".into());
    h.push("binary".into());
    h
}

pub fn embedding_header() -> Vec<String> {
    let mut h = vec!["speaker_id".to_string(), "group_index".to_string()];
    h.extend((0..EMBEDDING_DIM).map(|j| format!("e{j:02}")));
    h
}

pub fn prediction_header() -> Vec<String> {
    let mut h: Vec<String> = ["speaker_id", "system", "total", "binary", "severity"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((1..=ITEM_COUNT).map(|k| format!("q{k}")));
    h.push("expert".into());
    h
}

/// A labels-file row: a label plus the split it belongs to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelRow {
    pub label: SpeakerLabel,
    pub split: Split,
}

/// Row lengths are checked by hand so errors can name the row.
fn reader<R: Read>(input: R) -> csv::Reader<R> {
    ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input)
}

fn line_of(rec: &StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        csv::ErrorKind::UnequalLengths { expected_len, len, .. } => Error::Parse {
            line,
            column: None,
            message: format!("row has {len} columns, expected {expected_len}"),
        },
        other => Error::Parse {
            line,
            column: None,
            message: format!("{other:?}"),
        },
    }
}

fn check_header<R: Read>(rdr: &mut csv::Reader<R>, expected: &[String]) -> Result<()> {
    let got = rdr.headers().map_err(csv_error)?;
    if got.len() != expected.len() {
        return Err(Error::Parse {
            line: 1,
            column: None,
            message: format!("header has {} columns, expected {}", got.len(), expected.len()),
        });
    }
    if let Some((i, (g, e))) = got.iter().zip(expected).enumerate().find(|(_, (g, e))| g != e) {
        return Err(Error::Parse {
            line: 1,
            column: Some(i + 1),
            message: format!("header column '{g}', expected '{e}'"),
        });
    }
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &StringRecord, col: usize, what: &str) -> Result<T> {
    let raw = rec.get(col).unwrap_or("");
    raw.parse().map_err(|_| Error::Parse {
        line: line_of(rec),
        column: Some(col + 1),
        message: format!("invalid {what} '{raw}'"),
    })
}

fn flag(rec: &StringRecord, col: usize) -> Result<bool> {
    match rec.get(col) {
        Some("0") => Ok(false),
        Some("1") => Ok(true),
        other => Err(Error::Parse {
            line: line_of(rec),
            column: Some(col + 1),
            message: format!("binary must be 0 or 1, got '{}'", other.unwrap_or("")),
        }),
    }
}

fn expect_len(rec: &StringRecord, n: usize) -> Result<()> {
    if rec.len() != n {
        return Err(Error::Parse {
            line: line_of(rec),
            column: None,
            message: format!("row has {} columns, expected {n}", rec.len()),
        });
    }
    Ok(())
}

/// Reads a labels file, rejecting any row whose total, binary flag or item
/// scores disagree.
pub fn read_labels<R: Read>(input: R) -> Result<Vec<LabelRow>> {
    let header = label_header();
    let mut rdr = reader(input);
    check_header(&mut rdr, &header)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        expect_len(&rec, header.len())?;
        let line = line_of(&rec);
        let speaker_id = rec[0].to_string();
        if speaker_id.is_empty() {
            return Err(Error::Parse {
                line,
                column: Some(1),
                message: "empty speaker_id".into(),
            });
        }
        let split = Split::parse(&rec[1]).map_err(|_| Error::Parse {
            line,
            column: Some(2),
            message: format!("split must be train or dev, got '{}'", &rec[1]),
        })?;
        let mut items = [0u8; ITEM_COUNT];
        for (k, slot) in items.iter_mut().enumerate() {
            *slot = field(&rec, 2 + k, "item score")?;
        }
        let items = Phq8Items::new(items).map_err(|e| Error::Parse {
            line,
            column: None,
            message: e.to_string(),
        })?;
        let total: u8 = field(&rec, 2 + ITEM_COUNT, "total")?;
        let binary = flag(&rec, 3 + ITEM_COUNT)?;
        let severity = crate::domain::severity_of(u32::from(total)).unwrap_or(Severity::Severe);
        let label = SpeakerLabel {
            speaker_id,
            items,
            total,
            binary,
            severity,
        };
        if let Some(v) = label.violations().first() {
            return Err(Error::Parse {
                line,
                column: None,
                message: v.to_string(),
            });
        }
        rows.push(LabelRow { label, split });
    }
    Ok(rows)
}

pub fn write_labels<W: Write>(out: W, rows: &[LabelRow]) -> Result<()> {
    let mut w = WriterBuilder::new().from_writer(out);
    w.write_record(label_header()).map_err(csv_error)?;
    for r in rows {
        let l = &r.label;
        let mut rec = vec![l.speaker_id.clone(), r.split.name().to_string()];
        rec.extend(l.items.as_array().iter().map(u8::to_string));
        rec.push(l.total.to_string());
        rec.push(u8::from(l.binary).to_string());
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_embeddings<R: Read>(input: R) -> Result<Vec<GroupEmbedding<f64>>> {
    let header = embedding_header();
    let mut rdr = reader(input);
    check_header(&mut rdr, &header)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        if rec.len() != header.len() {
            return Err(Error::Parse {
                line: line_of(&rec),
                column: None,
                message: format!(
                    "embedding row has {} value columns, expected {EMBEDDING_DIM}",
                    rec.len().saturating_sub(2)
                ),
            });
        }
        let group_index: usize = field(&rec, 1, "group_index")?;
        let mut vector = Vec::with_capacity(EMBEDDING_DIM);
        for j in 0..EMBEDDING_DIM {
            let v: f64 = field(&rec, 2 + j, "embedding value")?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: line_of(&rec),
                    column: Some(3 + j),
                    message: "embedding value is not finite".into(),
                });
            }
            vector.push(v);
        }
        out.push(GroupEmbedding {
            speaker_id: rec[0].to_string(),
            group_index,
            vector,
        });
    }
    Ok(out)
}

pub fn write_embeddings<W: Write>(out: W, embeddings: &[GroupEmbedding<f64>]) -> Result<()> {
    let mut w = WriterBuilder::new().from_writer(out);
    w.write_record(embedding_header()).map_err(csv_error)?;
    for e in embeddings {
        let mut rec = vec![e.speaker_id.clone(), e.group_index.to_string()];
        rec.extend(e.vector.iter().map(f64::to_string));
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Joins label rows of one split with their embeddings and validates the result.
///
/// Embeddings of speakers labelled in another split are dropped; embeddings
/// of speakers absent from the labels entirely are reported as orphans.
pub fn assemble_cohort(labels: &[LabelRow], embeddings: Vec<GroupEmbedding<f64>>, split: Split) -> Result<Cohort<f64>> {
    let in_split: BTreeSet<&str> = labels
        .iter()
        .filter(|r| r.split == split)
        .map(|r| r.label.speaker_id.as_str())
        .collect();
    let other: BTreeSet<&str> = labels
        .iter()
        .filter(|r| r.split != split)
        .map(|r| r.label.speaker_id.as_str())
        .collect();
    let embeddings = embeddings
        .into_iter()
        .filter(|e| in_split.contains(e.speaker_id.as_str()) || !other.contains(e.speaker_id.as_str()))
        .collect();
    let cohort = Cohort {
        labels: labels.iter().filter(|r| r.split == split).map(|r| r.label.clone()).collect(),
        embeddings,
        split,
    };
    cohort.ensure_valid()?;
    Ok(cohort)
}

/// Splits a cohort back into label rows (for writing).
pub fn label_rows(cohort: &Cohort<f64>) -> Vec<LabelRow> {
    cohort
        .labels
        .iter()
        .map(|l| LabelRow {
            label: l.clone(),
            split: cohort.split,
        })
        .collect()
}

/// System that produced a predictions file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SystemKind {
    BottomUp,
    TopDown,
}

impl SystemKind {
    pub fn name(self) -> &'static str {
        match self {
            SystemKind::BottomUp => "bottom-up",
            SystemKind::TopDown => "top-down",
        }
    }

    pub fn of(prediction: &Prediction) -> Self {
        match prediction.source() {
            PredictionSource::BottomUp { .. } => SystemKind::BottomUp,
            PredictionSource::TopDown { .. } => SystemKind::TopDown,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bottom-up" => Ok(SystemKind::BottomUp),
            "top-down" => Ok(SystemKind::TopDown),
            other => Err(Error::domain(format!("unknown system '{other}'"))),
        }
    }
}

pub fn write_predictions<W: Write>(out: W, predictions: &[Prediction]) -> Result<()> {
    let mut w = WriterBuilder::new().from_writer(out);
    w.write_record(prediction_header()).map_err(csv_error)?;
    for p in predictions {
        let system = SystemKind::of(p);
        let mut rec = vec![
            p.speaker_id().to_string(),
            system.name().to_string(),
            p.predicted_total().to_string(),
            u8::from(p.predicted_binary()).to_string(),
            p.predicted_severity().name().to_string(),
        ];
        match p.source() {
            PredictionSource::BottomUp { predicted_items } => {
                rec.extend(predicted_items.as_array().iter().map(u8::to_string));
                rec.push(String::new());
            }
            PredictionSource::TopDown { expert } => {
                rec.extend(std::iter::repeat_n(String::new(), ITEM_COUNT));
                rec.push(expert.name().to_string());
            }
        }
        w.write_record(&rec).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads predictions, rejecting any row whose fields disagree with each other.
pub fn read_predictions<R: Read>(input: R) -> Result<Vec<Prediction>> {
    let header = prediction_header();
    let mut rdr = reader(input);
    check_header(&mut rdr, &header)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        expect_len(&rec, header.len())?;
        let line = line_of(&rec);
        let at = |column: usize, e: Error| Error::Parse {
            line,
            column: Some(column),
            message: e.to_string(),
        };
        let system = SystemKind::parse(&rec[1]).map_err(|e| at(2, e))?;
        let total: u8 = field(&rec, 2, "total")?;
        let binary = flag(&rec, 3)?;
        let severity = Severity::parse(&rec[4]).map_err(|e| at(5, e))?;
        let source = match system {
            SystemKind::BottomUp => {
                let mut items = [0u8; ITEM_COUNT];
                for (k, slot) in items.iter_mut().enumerate() {
                    *slot = field(&rec, 5 + k, "item score")?;
                }
                PredictionSource::BottomUp {
                    predicted_items: Phq8Items::new(items).map_err(|e| at(6, e))?,
                }
            }
            SystemKind::TopDown => PredictionSource::TopDown {
                expert: Severity::parse(&rec[5 + ITEM_COUNT]).map_err(|e| at(6 + ITEM_COUNT, e))?,
            },
        };
        let p = Prediction::from_parts(&rec[0], total, binary, severity, source).map_err(|e| Error::Parse {
            line,
            column: None,
            message: e.to_string(),
        })?;
        out.push(p);
    }
    Ok(out)
}

/// Reads an external feature table: `speaker_id` then one column per feature.
pub fn read_features<R: Read>(input: R) -> Result<FeatureTable> {
    let mut rdr = reader(input);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    if headers.get(0) != Some("speaker_id") || headers.len() < 2 {
        return Err(Error::Parse {
            line: 1,
            column: Some(1),
            message: "feature header must be speaker_id followed by at least one feature".into(),
        });
    }
    let features: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        expect_len(&rec, headers.len())?;
        let mut vals = Vec::with_capacity(features.len());
        for j in 1..rec.len() {
            let v = if rec[j].is_empty() || rec[j].eq_ignore_ascii_case("na") {
                None
            } else {
                let v: f64 = field(&rec, j, "feature value")?;
                v.is_finite().then_some(v)
            };
            vals.push(v);
        }
        rows.push((rec[0].to_string(), vals));
    }
    Ok(FeatureTable { features, rows })
}
