//! Line-delimited JSON formats.
//!
//! Corpus files hold one meeting per line:
//! `{"meeting_id": .., "dim": D, "segments": [{"start", "end", "speaker", "embedding": [..]}]}`.
//! Label files hold one hypothesis per line: `{"meeting_id": .., "labels": [..]}`.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{DncError, Result};
use crate::types::{EmbeddingSequence, IdentitySequence, MeetingRecord, Span};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentLine {
    start: f64,
    end: f64,
    speaker: String,
    embedding: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeetingLine {
    meeting_id: String,
    dim: usize,
    segments: Vec<SegmentLine>,
}

fn meeting_to_line(m: &MeetingRecord) -> MeetingLine {
    MeetingLine {
        meeting_id: m.meeting_id.clone(),
        dim: m.dim(),
        segments: (0..m.len())
            .map(|i| SegmentLine {
                start: m.spans[i].start,
                end: m.spans[i].end,
                speaker: m.identities.as_slice()[i].clone(),
                embedding: m.embeddings.row(i).to_vec(),
            })
            .collect(),
    }
}

fn line_to_meeting(line: MeetingLine, lineno: usize) -> Result<MeetingRecord> {
    let n = line.segments.len();
    let d = line.dim;
    let mut data = Array2::zeros((n, d));
    let mut ids = Vec::with_capacity(n);
    let mut spans = Vec::with_capacity(n);
    for (i, seg) in line.segments.into_iter().enumerate() {
        if seg.embedding.len() != d {
            return Err(DncError::Parse {
                line: lineno,
                message: format!("segment {i} has {} values, dim is {d}", seg.embedding.len()),
            });
        }
        data.row_mut(i).assign(&ndarray::ArrayView1::from(&seg.embedding));
        ids.push(seg.speaker);
        spans.push(Span::new(seg.start, seg.end));
    }
    let within = |e: DncError| match e {
        DncError::Validation(m) => DncError::Validation(format!("line {lineno}: {m}")),
        other => other,
    };
    let emb = EmbeddingSequence::new(data).map_err(within)?;
    MeetingRecord::new(line.meeting_id, emb, IdentitySequence(ids), spans).map_err(within)
}

pub fn write_corpus_to<W: Write>(meetings: &[MeetingRecord], mut out: W) -> Result<()> {
    for m in meetings {
        serde_json::to_writer(&mut out, &meeting_to_line(m))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_corpus(meetings: &[MeetingRecord], path: &Path) -> Result<()> {
    write_corpus_to(meetings, BufWriter::new(File::create(path)?))
}

/// Parses a corpus; blank lines are skipped, line numbers are 1-based.
pub fn read_corpus_from<R: BufRead>(input: R) -> Result<Vec<MeetingRecord>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in input.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: MeetingLine = serde_json::from_str(&line).map_err(|e| DncError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let m = line_to_meeting(parsed, lineno)?;
        if !seen.insert(m.meeting_id.clone()) {
            return Err(DncError::Validation(format!(
                "line {lineno}: duplicate meeting `{}`",
                m.meeting_id
            )));
        }
        out.push(m);
    }
    Ok(out)
}

pub fn parse_corpus(text: &str) -> Result<Vec<MeetingRecord>> {
    read_corpus_from(text.as_bytes())
}

pub fn read_corpus(path: &Path) -> Result<Vec<MeetingRecord>> {
    read_corpus_from(BufReader::new(File::open(path)?))
}

/// A hypothesis label sequence for one (sub-)meeting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRecord {
    pub meeting_id: String,
    pub labels: Vec<usize>,
}

pub fn write_labels_to<W: Write>(records: &[LabelRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_labels(records: &[LabelRecord], path: &Path) -> Result<()> {
    write_labels_to(records, BufWriter::new(File::create(path)?))
}

pub fn read_labels_from<R: BufRead>(input: R) -> Result<Vec<LabelRecord>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in input.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: LabelRecord = serde_json::from_str(&line).map_err(|e| DncError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if r.labels.is_empty() || r.labels.contains(&0) {
            return Err(DncError::Validation(format!(
                "line {lineno}: labels must be a non-empty list of positive integers"
            )));
        }
        if !seen.insert(r.meeting_id.clone()) {
            return Err(DncError::Validation(format!(
                "line {lineno}: duplicate meeting `{}`",
                r.meeting_id
            )));
        }
        out.push(r);
    }
    Ok(out)
}

pub fn parse_labels(text: &str) -> Result<Vec<LabelRecord>> {
    read_labels_from(text.as_bytes())
}

pub fn read_labels(path: &Path) -> Result<Vec<LabelRecord>> {
    read_labels_from(BufReader::new(File::open(path)?))
}
