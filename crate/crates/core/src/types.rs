//! Domain types shared across the pipeline.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{DncError, Result};
use crate::labels;

/// Tolerance on row norms when an embedding sequence is accepted from outside.
pub const LOAD_NORM_TOLERANCE: f64 = 1e-6;

/// N×D matrix of unit-norm segment embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    data: Array2<f64>,
}

impl EmbeddingSequence {
    /// Validates shape (N ≥ 1, D ≥ 2) and unit row norms.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (n, d) = data.dim();
        if n == 0 {
            return Err(DncError::Validation("embedding sequence is empty".into()));
        }
        if d < 2 {
            return Err(DncError::Validation(format!("embedding dimension {d} < 2")));
        }
        for (i, row) in data.outer_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if !norm.is_finite() || (norm - 1.0).abs() > LOAD_NORM_TOLERANCE {
                return Err(DncError::Validation(format!(
                    "embedding {i} has norm {norm}, expected 1"
                )));
            }
        }
        Ok(Self { data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(DncError::DimensionMismatch("rows of unequal length".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let data = Array2::from_shape_vec((n, d), flat)
            .map_err(|e| DncError::DimensionMismatch(e.to_string()))?;
        Self::new(data)
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.data.row(i)
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.data
    }

    /// Rows `start..end` (half-open) as a new sequence.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        Self {
            data: self.data.slice(ndarray::s![start..end, ..]).to_owned(),
        }
    }
}

/// Opaque speaker identity per segment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentitySequence(pub Vec<String>);

impl IdentitySequence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[String] {
        &self.0
    }
}

impl<S: Into<String>> FromIterator<S> for IdentitySequence {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        Self(iter.into_iter().map(Into::into).collect())
    }
}

/// Cluster labels numbered by first appearance: starts at 1, each new cluster
/// takes the next integer. Label 0 is reserved for the decoder start token.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct CanonicalLabelSequence(Vec<usize>);

impl CanonicalLabelSequence {
    pub fn new(labels: Vec<usize>) -> Result<Self> {
        if labels::is_canonical(&labels) {
            Ok(Self(labels))
        } else {
            Err(DncError::Validation(format!("labels {labels:?} are not canonical")))
        }
    }

    pub(crate) fn new_unchecked(labels: Vec<usize>) -> Self {
        debug_assert!(labels::is_canonical(&labels));
        Self(labels)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of clusters K (the largest label).
    pub fn num_clusters(&self) -> usize {
        self.0.iter().copied().max().unwrap_or(0)
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }
}

impl TryFrom<Vec<usize>> for CanonicalLabelSequence {
    type Error = DncError;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<CanonicalLabelSequence> for Vec<usize> {
    fn from(l: CanonicalLabelSequence) -> Self {
        l.0
    }
}

/// Segment time span in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub start: f64,
    pub end: f64,
}

impl Span {
    pub fn new(start: f64, end: f64) -> Self {
        Self { start, end }
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// One meeting: embeddings, reference speakers and segment times.
#[derive(Debug, Clone, PartialEq)]
pub struct MeetingRecord {
    pub meeting_id: String,
    pub embeddings: EmbeddingSequence,
    pub identities: IdentitySequence,
    pub spans: Vec<Span>,
}

impl MeetingRecord {
    /// Checks lengths, `start < end`, ordering by start time and the absence
    /// of segments enclosed in an earlier one.
    pub fn new(
        meeting_id: impl Into<String>,
        embeddings: EmbeddingSequence,
        identities: IdentitySequence,
        spans: Vec<Span>,
    ) -> Result<Self> {
        let meeting_id = meeting_id.into();
        let n = embeddings.len();
        if identities.len() != n || spans.len() != n {
            return Err(DncError::Validation(format!(
                "meeting `{meeting_id}`: {n} embeddings, {} identities, {} spans",
                identities.len(),
                spans.len()
            )));
        }
        validate_spans(&spans).map_err(|m| DncError::Validation(format!("meeting `{meeting_id}`: {m}")))?;
        Ok(Self {
            meeting_id,
            embeddings,
            identities,
            spans,
        })
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.dim()
    }

    pub fn labels(&self) -> CanonicalLabelSequence {
        labels::canonicalize(&self.identities)
    }

    /// Number of distinct speakers.
    pub fn num_speakers(&self) -> usize {
        self.labels().num_clusters()
    }
}

fn validate_spans(spans: &[Span]) -> std::result::Result<(), String> {
    let mut furthest_end = f64::NEG_INFINITY;
    let mut prev_start = f64::NEG_INFINITY;
    for (i, s) in spans.iter().enumerate() {
        if !(s.start.is_finite() && s.end.is_finite()) || s.start >= s.end {
            return Err(format!("segment {i} has invalid span [{}, {}]", s.start, s.end));
        }
        if s.start < prev_start {
            return Err(format!("segment {i} starts before segment {}", i - 1));
        }
        if s.end <= furthest_end {
            return Err(format!("segment {i} is enclosed in an earlier segment"));
        }
        prev_start = s.start;
        furthest_end = furthest_end.max(s.end);
    }
    Ok(())
}

/// Drops segments whose span lies inside another segment's span. Input must
/// be sorted by start time; returns the indices that are kept.
pub fn remove_enclosed_segments(spans: &[Span]) -> Vec<usize> {
    let mut keep: Vec<usize> = Vec::with_capacity(spans.len());
    for (i, s) in spans.iter().enumerate() {
        // A later segment with the same start and a longer end encloses the
        // previously kept one.
        while let Some(&last) = keep.last() {
            let k = spans[last];
            if k.start == s.start && s.end > k.end {
                keep.pop();
            } else {
                break;
            }
        }
        let enclosed = keep.last().is_some_and(|&last| spans[last].end >= s.end);
        if !enclosed {
            keep.push(i);
        }
    }
    keep
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn embedding_sequence_rejects_bad_norm_and_shape() {
        assert!(EmbeddingSequence::new(array![[1.0, 0.0], [0.6, 0.8]]).is_ok());
        assert!(EmbeddingSequence::new(array![[0.5, 0.0]]).is_err());
        assert!(EmbeddingSequence::new(array![[1.0]]).is_err());
        assert!(EmbeddingSequence::new(Array2::zeros((0, 3))).is_err());
    }

    #[test]
    fn canonical_label_sequence_validates() {
        assert!(CanonicalLabelSequence::new(vec![1, 2, 1, 3]).is_ok());
        assert!(CanonicalLabelSequence::new(vec![2, 1]).is_err());
        let l: CanonicalLabelSequence = serde_json::from_str("[1,1,2]").unwrap();
        assert_eq!(l.num_clusters(), 2);
        assert!(serde_json::from_str::<CanonicalLabelSequence>("[1,3]").is_err());
    }

    #[test]
    fn meeting_rejects_enclosed_and_inverted_spans() {
        let emb = EmbeddingSequence::new(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let ids: IdentitySequence = ["a", "b"].into_iter().collect();
        let ok = vec![Span::new(0.0, 1.0), Span::new(1.0, 2.0)];
        assert!(MeetingRecord::new("m", emb.clone(), ids.clone(), ok).is_ok());
        let enclosed = vec![Span::new(0.0, 3.0), Span::new(1.0, 2.0)];
        assert!(MeetingRecord::new("m", emb.clone(), ids.clone(), enclosed).is_err());
        let inverted = vec![Span::new(0.0, 1.0), Span::new(2.0, 2.0)];
        assert!(MeetingRecord::new("m", emb, ids, inverted).is_err());
    }

    #[test]
    fn enclosed_segments_are_dropped() {
        let spans = [
            Span::new(0.0, 5.0),
            Span::new(1.0, 2.0),
            Span::new(4.0, 7.0),
            Span::new(7.0, 8.0),
            Span::new(7.0, 9.0),
        ];
        assert_eq!(remove_enclosed_segments(&spans), vec![0, 2, 4]);
    }
}
