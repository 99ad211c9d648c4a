//! Data augmentation for training on few meetings.
//!
//! Three schemes, applied in this order when combined:
//! 1. sub-sequence randomisation: random contiguous slices of a meeting,
//!    relabelled canonically;
//! 2. input-vector randomisation: keep the label sequence, draw new speakers
//!    and embeddings from a pool (`global` or within one sampled `meeting`);
//! 3. Diaconis augmentation: rotate every embedding of the slice by one
//!    Haar-random rotation.
//!
//! Variance scaling by √D is applied last as the model input convention.

mod pool;
mod rotation;

use ndarray::Array2;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use pool::{EmbeddingPool, PoolMeeting};
pub use rotation::{sample_rotation, RotationMatrix};

use crate::error::{DncError, Result};
use crate::labels::canonicalize;
use crate::rng::{self, DncRng};
use crate::types::{CanonicalLabelSequence, EmbeddingSequence, IdentitySequence, MeetingRecord, Span};

/// Segments `s..=e` (1-based, inclusive) of a meeting.
pub fn sub_sequence(meeting: &MeetingRecord, s: usize, e: usize) -> Result<MeetingRecord> {
    let n = meeting.len();
    if s < 1 || s > e || e > n {
        return Err(DncError::InvalidArgument(format!(
            "sub-sequence {s}..={e} outside 1..={n}"
        )));
    }
    if s == 1 && e == n {
        return Ok(meeting.clone());
    }
    let (lo, hi) = (s - 1, e);
    MeetingRecord::new(
        format!("{}[{s}-{e}]", meeting.meeting_id),
        meeting.embeddings.slice_rows(lo, hi),
        IdentitySequence(meeting.identities.as_slice()[lo..hi].to_vec()),
        meeting.spans[lo..hi].to_vec(),
    )
}

/// Where input-vector randomisation draws speakers and embeddings from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    /// Any speakers of the training set, any of their vectors.
    Global,
    /// Speakers and vectors of one randomly chosen training meeting.
    Meeting,
}

/// Builds a new meeting realising `labels`: each cluster gets a distinct
/// speaker from the pool and each position a random vector of its speaker.
pub fn randomize_inputs<R: Rng + ?Sized>(
    labels: &CanonicalLabelSequence,
    spans: &[Span],
    pool: &EmbeddingPool,
    mode: PoolMode,
    rng: &mut R,
) -> Result<MeetingRecord> {
    if spans.len() != labels.len() {
        return Err(DncError::DimensionMismatch(format!(
            "{} labels but {} spans",
            labels.len(),
            spans.len()
        )));
    }
    let k = labels.num_clusters();
    // Candidate vectors per cluster, and the speaker chosen for it.
    let (speakers, candidates): (Vec<String>, Vec<&Vec<usize>>) = match mode {
        PoolMode::Global => {
            if pool.num_speakers() < k {
                return Err(DncError::InsufficientSpeakers {
                    needed: k,
                    available: pool.num_speakers(),
                });
            }
            let all: Vec<(&String, &Vec<usize>)> = pool.speakers().collect();
            index::sample(rng, all.len(), k)
                .into_iter()
                .map(|i| (all[i].0.clone(), all[i].1))
                .unzip()
        }
        PoolMode::Meeting => {
            let eligible: Vec<&PoolMeeting> =
                pool.meetings().iter().filter(|m| m.by_speaker.len() >= k).collect();
            if eligible.is_empty() {
                let best = pool.meetings().iter().map(|m| m.by_speaker.len()).max().unwrap_or(0);
                return Err(DncError::InsufficientSpeakers {
                    needed: k,
                    available: best,
                });
            }
            let meeting = eligible[rng.random_range(0..eligible.len())];
            let all: Vec<(&String, &Vec<usize>)> = meeting.by_speaker.iter().collect();
            index::sample(rng, all.len(), k)
                .into_iter()
                .map(|i| (all[i].0.clone(), all[i].1))
                .unzip()
        }
    };

    let n = labels.len();
    let mut data = Array2::zeros((n, pool.dim()));
    let mut ids = Vec::with_capacity(n);
    for (i, &label) in labels.as_slice().iter().enumerate() {
        let c = label - 1;
        let pick = candidates[c][rng.random_range(0..candidates[c].len())];
        data.row_mut(i).assign(&pool.vector(pick));
        ids.push(speakers[c].clone());
    }
    MeetingRecord::new(
        "randomised",
        EmbeddingSequence::new(data)?,
        IdentitySequence(ids),
        spans.to_vec(),
    )
}

/// Rotates every embedding: `X' = X R`.
pub fn diaconis_augment(meeting: &MeetingRecord, rotation: &RotationMatrix) -> Result<MeetingRecord> {
    if rotation.dim() != meeting.dim() {
        return Err(DncError::DimensionMismatch(format!(
            "rotation of dimension {} for embeddings of dimension {}",
            rotation.dim(),
            meeting.dim()
        )));
    }
    let rotated = meeting.embeddings.data().dot(&rotation.data());
    Ok(MeetingRecord {
        embeddings: EmbeddingSequence::new(rotated)?,
        ..meeting.clone()
    })
}

/// Multiplies every embedding by `factor` (√D gives unit per-dimension
/// variance for points uniform on the sphere).
pub fn scale_variance(embeddings: &EmbeddingSequence, factor: f64) -> Array2<f64> {
    embeddings.data().mapv(|x| x * factor)
}

/// The √D variance-normalising factor.
pub fn variance_factor(dim: usize) -> f64 {
    (dim as f64).sqrt()
}

/// Input-vector randomisation setting of a training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Randomisation {
    /// Sub-sequence randomisation only.
    #[default]
    None,
    Global,
    Meeting,
}

impl Randomisation {
    pub fn pool_mode(self) -> Option<PoolMode> {
        match self {
            Randomisation::None => None,
            Randomisation::Global => Some(PoolMode::Global),
            Randomisation::Meeting => Some(PoolMode::Meeting),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    /// Sub-meetings generated per original meeting.
    pub examples_per_meeting: usize,
    /// Longest sub-meeting; `None` means the whole meeting.
    #[serde(default)]
    pub max_len: Option<usize>,
    /// Sub-meeting lengths are drawn uniformly from
    /// `[ceil(min_len_fraction · max_len), max_len]`.
    #[serde(default = "default_min_fraction")]
    pub min_len_fraction: f64,
    #[serde(default)]
    pub randomisation: Randomisation,
    #[serde(default)]
    pub diaconis: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_min_fraction() -> f64 {
    1.0
}

impl AugmentConfig {
    /// Sub-sequence randomisation only.
    pub fn sub_sequence_only(examples_per_meeting: usize, max_len: Option<usize>, seed: u64) -> Self {
        Self {
            examples_per_meeting,
            max_len,
            min_len_fraction: 1.0,
            randomisation: Randomisation::None,
            diaconis: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.examples_per_meeting == 0 {
            return Err(DncError::InvalidArgument("examples_per_meeting must be positive".into()));
        }
        if self.max_len == Some(0) {
            return Err(DncError::InvalidArgument("max_len must be positive".into()));
        }
        if !(self.min_len_fraction > 0.0 && self.min_len_fraction <= 1.0) {
            return Err(DncError::InvalidArgument(format!(
                "min_len_fraction {} outside (0, 1]",
                self.min_len_fraction
            )));
        }
        Ok(())
    }
}

/// One model-ready example: variance-scaled inputs and canonical targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub inputs: Array2<f64>,
    pub labels: CanonicalLabelSequence,
}

/// Deterministic, randomly addressable stream of augmented examples.
///
/// Example `i` comes from meeting `i / examples_per_meeting` and is generated
/// from its own RNG stream, so any subset can be produced in any order.
#[derive(Debug, Clone)]
pub struct TrainingSet<'a> {
    corpus: &'a [MeetingRecord],
    pool: Option<EmbeddingPool>,
    config: AugmentConfig,
}

/// Prepares the augmented training stream for `corpus`.
pub fn build_training_set<'a>(corpus: &'a [MeetingRecord], config: &AugmentConfig) -> Result<TrainingSet<'a>> {
    if corpus.is_empty() {
        return Err(DncError::InvalidArgument("empty training corpus".into()));
    }
    config.validate()?;
    let pool = match config.randomisation {
        Randomisation::None => None,
        _ => Some(EmbeddingPool::from_corpus(corpus)?),
    };
    Ok(TrainingSet {
        corpus,
        pool,
        config: config.clone(),
    })
}

impl<'a> TrainingSet<'a> {
    pub fn len(&self) -> usize {
        self.corpus.len() * self.config.examples_per_meeting
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn config(&self) -> &AugmentConfig {
        &self.config
    }

    /// Generates the augmented meeting behind example `i` (before scaling).
    pub fn meeting(&self, i: usize) -> Result<MeetingRecord> {
        if i >= self.len() {
            return Err(DncError::InvalidArgument(format!("example {i} of {}", self.len())));
        }
        let source = &self.corpus[i / self.config.examples_per_meeting];
        let mut rng: DncRng = rng::stream(self.config.seed, &[rng::tag::AUGMENT, i as u64]);

        let n = source.len();
        let max_len = self.config.max_len.unwrap_or(n).min(n);
        let min_len = ((self.config.min_len_fraction * max_len as f64).ceil() as usize).clamp(1, max_len);
        let len = rng.random_range(min_len..=max_len);
        let start = rng.random_range(0..=n - len);
        let mut meeting = sub_sequence(source, start + 1, start + len)?;

        if let (Some(mode), Some(pool)) = (self.config.randomisation.pool_mode(), self.pool.as_ref()) {
            let labels = meeting.labels();
            let id = meeting.meeting_id.clone();
            meeting = randomize_inputs(&labels, &meeting.spans, pool, mode, &mut rng)?;
            meeting.meeting_id = id;
        }
        if self.config.diaconis {
            let r = sample_rotation(meeting.dim(), &mut rng)?;
            meeting = diaconis_augment(&meeting, &r)?;
        }
        Ok(meeting)
    }

    pub fn example(&self, i: usize) -> Result<TrainingExample> {
        let meeting = self.meeting(i)?;
        let factor = variance_factor(meeting.dim());
        Ok(TrainingExample {
            inputs: scale_variance(&meeting.embeddings, factor),
            labels: canonicalize(&meeting.identities),
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = Result<TrainingExample>> + '_ {
        (0..self.len()).map(move |i| self.example(i))
    }
}
