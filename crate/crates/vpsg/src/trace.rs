//! Line-delimited trace files carrying recorded per-step log-probability
//! rows for the main route and each auxiliary seed.
//!
//! A trace is one JSON object per line: a single header first, then step
//! records with contiguous indices from 0. Floats are written in shortest
//! round-trip form and parsed exactly, so a replayed trace reproduces the
//! recorded distributions bit for bit.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::core::{BBox, CoreError, ImageMeta, StepDistribution, StructuralIds, TokenId};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: invalid JSON: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("trace contains no step records")]
    Empty,
    #[error("line 1: first record must be the header")]
    FirstRecordNotHeader,
    #[error("line {line}: duplicate header")]
    DuplicateHeader { line: usize },
    #[error("line {line}: step index {got}, expected {expected} (indices must be contiguous from 0)")]
    NonContiguousIndex {
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("line {line}: {route} row has {got} entries, expected {expected}")]
    RowLength {
        line: usize,
        route: String,
        expected: usize,
        got: usize,
    },
    #[error("line {line}: {route} row exponentiates to {sum:.9}, outside 1 +/- 1e-6")]
    RowNotNormalized {
        line: usize,
        route: String,
        sum: f64,
    },
    #[error("line {line}: {route} row entry {id} is {value}; must be <= 0 and not NaN")]
    RowInvalidEntry {
        line: usize,
        route: String,
        id: TokenId,
        value: f64,
    },
    #[error("line {line}: step has {got} auxiliary rows, header declares {expected} seeds")]
    AuxCount {
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("header: {0}")]
    Header(#[from] CoreError),
}

/// Image block of the trace header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceImage {
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_bbox: Option<BBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ui_type: Option<String>,
}

/// First record of every trace: the vocabulary declaration, the seed count
/// and the image the rows were recorded on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub vocab: Vec<String>,
    pub digit_ids: Vec<TokenId>,
    pub structural: StructuralIds,
    pub seeds: usize,
    pub image: TraceImage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

/// One decode step: the main-route row and one row per auxiliary seed, all
/// natural-log probabilities over the declared vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub index: usize,
    pub main: Vec<f64>,
    pub aux: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum TraceRecord {
    Header(TraceHeader),
    Step(TraceStep),
}

/// A parsed, validated trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub header: TraceHeader,
    pub steps: Vec<TraceStep>,
}

impl TraceFile {
    /// Builds the declared vocabulary, validating it.
    pub fn vocabulary(&self) -> Result<crate::core::Vocabulary, CoreError> {
        crate::core::Vocabulary::new(
            self.header.vocab.clone(),
            self.header.digit_ids.iter().copied(),
            self.header.structural,
        )
    }

    /// Image metadata for analysis records, labelled with `id`.
    pub fn image_meta(&self, id: impl Into<String>) -> Result<ImageMeta, CoreError> {
        let img = &self.header.image;
        let mut meta = ImageMeta::new(id, img.width, img.height)?;
        if let Some(b) = img.gt_bbox {
            meta = meta.with_gt_bbox(b)?;
        }
        meta.category = img.category.clone();
        meta.ui_type = img.ui_type.clone();
        Ok(meta)
    }
}

fn check_row(
    line: usize,
    route: &str,
    row: &[f64],
    expected_len: usize,
) -> Result<(), TraceError> {
    if row.len() != expected_len {
        return Err(TraceError::RowLength {
            line,
            route: route.to_string(),
            expected: expected_len,
            got: row.len(),
        });
    }
    match StepDistribution::new(row.to_vec()) {
        Ok(_) => Ok(()),
        Err(CoreError::InvalidLogProb { id, value }) => Err(TraceError::RowInvalidEntry {
            line,
            route: route.to_string(),
            id,
            value,
        }),
        Err(CoreError::NotNormalized { sum }) => Err(TraceError::RowNotNormalized {
            line,
            route: route.to_string(),
            sum,
        }),
        Err(e) => Err(TraceError::Header(e)),
    }
}

/// Reads and validates a trace from any buffered reader. Errors carry the
/// 1-based line number.
pub fn read_trace<R: BufRead>(reader: R) -> Result<TraceFile, TraceError> {
    let mut header: Option<TraceHeader> = None;
    let mut steps: Vec<TraceStep> = Vec::new();

    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let record: TraceRecord =
            serde_json::from_str(&text).map_err(|source| TraceError::Json {
                line: line_no,
                source,
            })?;
        match record {
            TraceRecord::Header(h) => {
                if header.is_some() {
                    return Err(TraceError::DuplicateHeader { line: line_no });
                }
                if !steps.is_empty() || line_no != 1 {
                    return Err(TraceError::FirstRecordNotHeader);
                }
                // Validate the declared vocabulary and image eagerly.
                crate::core::Vocabulary::new(
                    h.vocab.clone(),
                    h.digit_ids.iter().copied(),
                    h.structural,
                )?;
                if h.image.width == 0 || h.image.height == 0 {
                    return Err(CoreError::InvalidImage(format!(
                        "image must have positive size, got {}x{}",
                        h.image.width, h.image.height
                    ))
                    .into());
                }
                if let Some(b) = h.image.gt_bbox {
                    if b.x1 > h.image.width || b.y1 > h.image.height {
                        return Err(CoreError::InvalidImage(
                            "gt_bbox exceeds image bounds".to_string(),
                        )
                        .into());
                    }
                }
                header = Some(h);
            }
            TraceRecord::Step(step) => {
                let Some(h) = header.as_ref() else {
                    return Err(TraceError::FirstRecordNotHeader);
                };
                if step.index != steps.len() {
                    return Err(TraceError::NonContiguousIndex {
                        line: line_no,
                        expected: steps.len(),
                        got: step.index,
                    });
                }
                check_row(line_no, "main", &step.main, h.vocab.len())?;
                if step.aux.len() != h.seeds {
                    return Err(TraceError::AuxCount {
                        line: line_no,
                        expected: h.seeds,
                        got: step.aux.len(),
                    });
                }
                for (k, row) in step.aux.iter().enumerate() {
                    check_row(line_no, &format!("aux[{k}]"), row, h.vocab.len())?;
                }
                steps.push(step);
            }
        }
    }

    let header = header.ok_or(TraceError::Empty)?;
    if steps.is_empty() {
        return Err(TraceError::Empty);
    }
    Ok(TraceFile { header, steps })
}

pub fn read_trace_file(path: impl AsRef<Path>) -> Result<TraceFile, TraceError> {
    read_trace(BufReader::new(File::open(path)?))
}

/// Writes one record per line; floats keep their exact values through the
/// shortest round-trip representation.
pub fn write_trace<W: Write>(mut writer: W, trace: &TraceFile) -> Result<(), TraceError> {
    let header = serde_json::to_string(&TraceRecord::Header(trace.header.clone()))
        .expect("header serializes");
    writer.write_all(header.as_bytes())?;
    writer.write_all(b"\n")?;
    for step in &trace.steps {
        let line = serde_json::to_string(&TraceRecord::Step(step.clone()))
            .expect("step serializes");
        writer.write_all(line.as_bytes())?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_trace_file(path: impl AsRef<Path>, trace: &TraceFile) -> Result<(), TraceError> {
    let mut writer = BufWriter::new(File::create(path)?);
    write_trace(&mut writer, trace)?;
    writer.flush()?;
    Ok(())
}
