use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView1};

use crate::error::{DncError, Result};
use crate::types::{MeetingRecord, LOAD_NORM_TOLERANCE};

/// Sampling source for input-vector randomisation: every unit vector of every
/// speaker, plus the grouping of speakers and vectors by meeting.
#[derive(Debug, Clone)]
pub struct EmbeddingPool {
    vectors: Array2<f64>,
    by_speaker: BTreeMap<String, Vec<usize>>,
    meetings: Vec<PoolMeeting>,
}

#[derive(Debug, Clone)]
pub struct PoolMeeting {
    pub meeting_id: String,
    pub by_speaker: BTreeMap<String, Vec<usize>>,
}

impl EmbeddingPool {
    pub fn from_corpus(corpus: &[MeetingRecord]) -> Result<Self> {
        let dim = corpus
            .first()
            .map(MeetingRecord::dim)
            .ok_or_else(|| DncError::InvalidArgument("empty corpus".into()))?;
        let total: usize = corpus.iter().map(MeetingRecord::len).sum();
        let mut vectors = Array2::zeros((total, dim));
        let mut by_speaker: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut meetings = Vec::with_capacity(corpus.len());
        let mut next = 0;
        for m in corpus {
            if m.dim() != dim {
                return Err(DncError::DimensionMismatch(format!(
                    "meeting `{}` has dimension {}, expected {dim}",
                    m.meeting_id,
                    m.dim()
                )));
            }
            let mut local: BTreeMap<String, Vec<usize>> = BTreeMap::new();
            for (i, spk) in m.identities.as_slice().iter().enumerate() {
                vectors.row_mut(next).assign(&m.embeddings.row(i));
                by_speaker.entry(spk.clone()).or_default().push(next);
                local.entry(spk.clone()).or_default().push(next);
                next += 1;
            }
            meetings.push(PoolMeeting {
                meeting_id: m.meeting_id.clone(),
                by_speaker: local,
            });
        }
        let pool = Self {
            vectors,
            by_speaker,
            meetings,
        };
        pool.validate()?;
        Ok(pool)
    }

    fn validate(&self) -> Result<()> {
        for (i, row) in self.vectors.outer_iter().enumerate() {
            let n = row.dot(&row).sqrt();
            if (n - 1.0).abs() > LOAD_NORM_TOLERANCE {
                return Err(DncError::Validation(format!("pool vector {i} has norm {n}")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn num_speakers(&self) -> usize {
        self.by_speaker.len()
    }

    pub fn speakers(&self) -> impl Iterator<Item = (&String, &Vec<usize>)> {
        self.by_speaker.iter()
    }

    pub fn meetings(&self) -> &[PoolMeeting] {
        &self.meetings
    }

    pub fn vector(&self, index: usize) -> ArrayView1<'_, f64> {
        self.vectors.row(index)
    }
}
