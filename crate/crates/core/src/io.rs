//! JSON Lines datasets and prediction files, plus single-document JSON for
//! reports and anchor sets.
//!
//! Every file starts with a header `{"schema_version":"1","kind":...}`.
//! Numbers are written as shortest round-trip decimals, so writing and
//! reading reproduces every field exactly.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::camera::Lane2D;
use crate::datagen::FrameRecord;
use crate::error::{Error, Result};
use crate::geometry::DecoupledLane3D;

pub const SCHEMA_VERSION: &str = "1";
pub const DATASET_KIND: &str = "dataset";
pub const PREDICTIONS_KIND: &str = "predictions";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    schema_version: Option<String>,
    kind: Option<String>,
}

/// A 2D lane with a confidence score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredLane2D {
    pub points: Vec<(f64, f64)>,
    pub score: f64,
}

impl ScoredLane2D {
    pub fn lane(&self) -> Result<Lane2D> {
        Lane2D::new(self.points.clone())
    }
}

/// Predictions for one frame: decoupled 3D lanes, 2D polylines, or both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub frame_id: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lanes_3d: Vec<DecoupledLane3D>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lanes_2d: Vec<ScoredLane2D>,
}

fn schema(line: usize, path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Schema {
        line,
        path: path.into(),
        message: message.into(),
    }
}

fn parse_line<T: DeserializeOwned>(text: &str, line: usize) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        schema(line, path, e.into_inner().to_string())
    })
}

fn check_header(text: Option<&str>, kind: &str) -> Result<()> {
    let text = text.ok_or_else(|| schema(1, ".", "missing header line"))?;
    let h: Header = parse_line(text, 1)?;
    match h.schema_version.as_deref() {
        None => return Err(schema(1, "schema_version", "missing field")),
        Some(SCHEMA_VERSION) => {}
        Some(v) => {
            return Err(Error::Version {
                found: v.to_string(),
            })
        }
    }
    match h.kind.as_deref() {
        Some(k) if k == kind => Ok(()),
        Some(k) => Err(schema(1, "kind", format!("expected {kind:?}, found {k:?}"))),
        None => Err(schema(1, "kind", "missing field")),
    }
}

/// Records of a JSON Lines file of the given kind, with their line numbers.
pub fn read_jsonl<T: DeserializeOwned, R: BufRead>(
    reader: R,
    kind: &str,
) -> Result<Vec<(usize, T)>> {
    let lines: Vec<String> = reader.lines().collect::<std::io::Result<_>>()?;
    check_header(lines.first().map(String::as_str), kind)?;
    lines
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_line(l, i + 1).map(|r| (i + 1, r)))
        .collect()
}

pub fn write_jsonl<T: Serialize, W: Write>(mut writer: W, kind: &str, records: &[T]) -> Result<()> {
    let header = Header {
        schema_version: Some(SCHEMA_VERSION.into()),
        kind: Some(kind.into()),
    };
    writeln!(writer, "{}", to_json(&header)?)?;
    for r in records {
        writeln!(writer, "{}", to_json(r)?)?;
    }
    writer.flush()?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string(value).map_err(|e| Error::Io(e.to_string()))
}

fn validate_frame(f: &FrameRecord, line: usize) -> Result<()> {
    f.intrinsics
        .validate()
        .map_err(|e| schema(line, "intrinsics", e.to_string()))?;
    if f.lanes_3d.len() != f.lanes_2d.len() {
        return Err(schema(
            line,
            "lanes_2d",
            format!(
                "{} 2D lanes for {} 3D lanes",
                f.lanes_2d.len(),
                f.lanes_3d.len()
            ),
        ));
    }
    for (i, l) in f.lanes_2d.iter().enumerate() {
        l.validate()
            .map_err(|e| schema(line, format!("lanes_2d[{i}]"), e.to_string()))?;
    }
    for (i, l) in f.lanes_3d.iter().enumerate() {
        if l.len() < 2 || l.windows(2).any(|w| !(w[1].z > w[0].z)) {
            return Err(schema(
                line,
                format!("lanes_3d[{i}]"),
                "needs at least 2 points with strictly increasing z",
            ));
        }
    }
    Ok(())
}

pub fn read_dataset<R: BufRead>(reader: R) -> Result<Vec<FrameRecord>> {
    let rows: Vec<(usize, FrameRecord)> = read_jsonl(reader, DATASET_KIND)?;
    let mut ids = HashSet::new();
    for (line, f) in &rows {
        validate_frame(f, *line)?;
        if !ids.insert(f.id.as_str()) {
            return Err(schema(
                *line,
                "id",
                format!("duplicate frame id {:?}", f.id),
            ));
        }
    }
    Ok(rows.into_iter().map(|(_, f)| f).collect())
}

pub fn write_dataset<W: Write>(writer: W, frames: &[FrameRecord]) -> Result<()> {
    write_jsonl(writer, DATASET_KIND, frames)
}

fn validate_prediction(p: &PredictionRecord, line: usize) -> Result<()> {
    for (i, l) in p.lanes_3d.iter().enumerate() {
        l.validate()
            .map_err(|e| schema(line, format!("lanes_3d[{i}]"), e.to_string()))?;
    }
    for (i, l) in p.lanes_2d.iter().enumerate() {
        if !(0.0..=1.0).contains(&l.score) {
            return Err(schema(
                line,
                format!("lanes_2d[{i}].score"),
                format!("score {} outside [0, 1]", l.score),
            ));
        }
        l.lane()
            .map_err(|e| schema(line, format!("lanes_2d[{i}].points"), e.to_string()))?;
    }
    Ok(())
}

/// Reads predictions; when `frames` is given every frame id must exist in it.
pub fn read_predictions<R: BufRead>(
    reader: R,
    frames: Option<&[FrameRecord]>,
) -> Result<Vec<PredictionRecord>> {
    let rows: Vec<(usize, PredictionRecord)> = read_jsonl(reader, PREDICTIONS_KIND)?;
    let known: Option<HashSet<&str>> = frames.map(|f| f.iter().map(|f| f.id.as_str()).collect());
    for (line, p) in &rows {
        validate_prediction(p, *line)?;
        if let Some(known) = &known {
            if !known.contains(p.frame_id.as_str()) {
                return Err(schema(
                    *line,
                    "frame_id",
                    format!("unknown frame id {:?}", p.frame_id),
                ));
            }
        }
    }
    Ok(rows.into_iter().map(|(_, p)| p).collect())
}

pub fn write_predictions<W: Write>(writer: W, preds: &[PredictionRecord]) -> Result<()> {
    write_jsonl(writer, PREDICTIONS_KIND, preds)
}

#[derive(Serialize, Deserialize)]
struct Document<T> {
    schema_version: String,
    kind: String,
    data: T,
}

/// Pretty-printed single JSON document with the schema header fields.
pub fn to_json_document<T: Serialize>(kind: &str, data: &T) -> Result<String> {
    let doc = Document {
        schema_version: SCHEMA_VERSION.into(),
        kind: kind.into(),
        data,
    };
    let mut s = serde_json::to_string_pretty(&doc).map_err(|e| Error::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn from_json_document<T: DeserializeOwned>(kind: &str, text: &str) -> Result<T> {
    let h: Header = parse_line(text, 1)?;
    match h.schema_version.as_deref() {
        Some(SCHEMA_VERSION) => {}
        Some(v) => {
            return Err(Error::Version {
                found: v.to_string(),
            })
        }
        None => return Err(schema(1, "schema_version", "missing field")),
    }
    if h.kind.as_deref() != Some(kind) {
        return Err(schema(1, "kind", format!("expected {kind:?}")));
    }
    let doc: Document<T> = parse_line(text, 1)?;
    Ok(doc.data)
}
