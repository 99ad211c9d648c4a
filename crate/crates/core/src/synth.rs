//! Synthetic meeting corpora: speakers are directions on the unit sphere,
//! segments are noisy copies of their speaker's direction, and turns follow a
//! first-order stay/switch process.

use ndarray::{Array1, Array2};
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{DncError, Result};
use crate::geometry::l2_normalize;
use crate::rng::{self, DncRng};
use crate::types::{EmbeddingSequence, IdentitySequence, MeetingRecord, Span};

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerModel {
    pub mean_direction: Array1<f64>,
    /// Inverse noise variance; `f64::INFINITY` gives noiseless embeddings.
    pub concentration: f64,
}

impl SpeakerModel {
    pub fn new(mean_direction: Array1<f64>, concentration: f64) -> Result<Self> {
        let norm = mean_direction.dot(&mean_direction).sqrt();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(DncError::Validation(format!("speaker mean has norm {norm}")));
        }
        if !(concentration > 0.0) {
            return Err(DncError::InvalidArgument(format!("concentration {concentration} must be positive")));
        }
        Ok(Self {
            mean_direction,
            concentration,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean_direction.len()
    }

    /// One embedding: Gaussian noise in the tangent space of the mean with
    /// per-dimension variance `1 / concentration`, then renormalisation.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Array1<f64> {
        let mu = &self.mean_direction;
        if self.concentration.is_infinite() {
            return mu.clone();
        }
        let mut noise = Array1::from_shape_simple_fn(mu.len(), || rng.sample::<f64, _>(StandardNormal));
        let along = noise.dot(mu);
        noise.scaled_add(-along, mu);
        let v = mu + &(noise / self.concentration.sqrt());
        // The tangent component is orthogonal to mu, so v is never zero.
        l2_normalize(v.view()).expect("tangent perturbation of a unit vector is non-zero")
    }
}

/// Speaker with a uniformly random mean direction.
pub fn gen_speaker<R: Rng + ?Sized>(dim: usize, concentration: f64, rng: &mut R) -> Result<SpeakerModel> {
    if dim < 2 {
        return Err(DncError::InvalidArgument(format!("speaker dimension {dim} < 2")));
    }
    loop {
        let g = Array1::from_shape_simple_fn(dim, || rng.sample::<f64, _>(StandardNormal));
        if let Ok(mean) = l2_normalize(g.view()) {
            return SpeakerModel::new(mean, concentration);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TurnModel {
    /// Probability that the next segment has the same speaker.
    pub stay_probability: f64,
    /// Inclusive range of speakers per meeting.
    pub speakers_per_meeting: (usize, usize),
    /// Segment durations in seconds, drawn uniformly.
    pub segment_duration: (f64, f64),
    /// Each listed speaker gets at least this many segments; 0 disables the
    /// forced appearance.
    pub min_segments_per_speaker: usize,
}

pub const DEFAULT_MAX_SPEAKERS: usize = 4;

impl Default for TurnModel {
    fn default() -> Self {
        Self {
            stay_probability: 0.5,
            speakers_per_meeting: (2, DEFAULT_MAX_SPEAKERS),
            segment_duration: (1.0, 6.0),
            min_segments_per_speaker: 3,
        }
    }
}

impl TurnModel {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.speakers_per_meeting;
        let (dmin, dmax) = self.segment_duration;
        if !(0.0..=1.0).contains(&self.stay_probability) {
            return Err(DncError::InvalidArgument(format!(
                "stay_probability {} outside [0, 1]",
                self.stay_probability
            )));
        }
        if lo < 1 || lo > hi {
            return Err(DncError::InvalidArgument(format!("speakers_per_meeting range {lo}..={hi}")));
        }
        if !(dmin > 0.0 && dmin <= dmax && dmax.is_finite()) {
            return Err(DncError::InvalidArgument(format!("segment_duration range {dmin}..{dmax}")));
        }
        Ok(())
    }
}

/// Generates one meeting for the given `(speaker id, model)` pairs.
pub fn gen_meeting<R: Rng + ?Sized>(
    meeting_id: &str,
    speakers: &[(String, SpeakerModel)],
    n_segments: usize,
    turn: &TurnModel,
    rng: &mut R,
) -> Result<MeetingRecord> {
    turn.validate()?;
    let k = speakers.len();
    if k == 0 {
        return Err(DncError::InvalidArgument("meeting without speakers".into()));
    }
    let forced = turn.min_segments_per_speaker;
    if n_segments < k.max(1) * forced.max(1) || n_segments == 0 {
        return Err(DncError::InvalidArgument(format!(
            "{n_segments} segments cannot host {k} speakers with {forced} segments each"
        )));
    }
    let dim = speakers[0].1.dim();
    if speakers.iter().any(|(_, s)| s.dim() != dim) {
        return Err(DncError::DimensionMismatch("speakers of different dimensions".into()));
    }

    let mut who = Vec::with_capacity(n_segments);
    let mut current = rng.random_range(0..k);
    who.push(current);
    for _ in 1..n_segments {
        if k > 1 && !rng.random_bool(turn.stay_probability) {
            let other = rng.random_range(0..k - 1);
            current = if other >= current { other + 1 } else { other };
        }
        who.push(current);
    }
    if forced > 0 {
        force_appearances(&mut who, k, forced, rng);
    }

    let mut data = Array2::zeros((n_segments, dim));
    let mut spans = Vec::with_capacity(n_segments);
    let (dmin, dmax) = turn.segment_duration;
    let mut t = 0.0;
    for (i, &s) in who.iter().enumerate() {
        data.row_mut(i).assign(&speakers[s].1.sample(rng));
        let dur = if dmax > dmin { rng.random_range(dmin..dmax) } else { dmin };
        // Millisecond grid keeps spans exact through the scorer.
        let end = ((t + dur) * 1000.0).round() / 1000.0;
        spans.push(Span::new(t, end));
        t = end;
    }
    let ids = IdentitySequence(who.iter().map(|&s| speakers[s].0.clone()).collect());
    MeetingRecord::new(meeting_id, EmbeddingSequence::new(data)?, ids, spans)
}

/// Reassigns random segments of over-represented speakers until every
/// speaker has at least `min` segments.
fn force_appearances<R: Rng + ?Sized>(who: &mut [usize], k: usize, min: usize, rng: &mut R) {
    let mut counts = vec![0usize; k];
    for &s in who.iter() {
        counts[s] += 1;
    }
    for s in 0..k {
        while counts[s] < min {
            let donors: Vec<usize> = (0..who.len()).filter(|&i| counts[who[i]] > min).collect();
            let i = donors[rng.random_range(0..donors.len())];
            counts[who[i]] -= 1;
            who[i] = s;
            counts[s] += 1;
        }
    }
}

/// Sizes and generator settings of a train/dev/eval corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSpec {
    pub train_meetings: usize,
    pub dev_meetings: usize,
    pub eval_meetings: usize,
    pub dim: usize,
    pub seed: u64,
    pub concentration: f64,
    /// Size of each split's speaker population (disjoint across splits).
    pub speaker_population: (usize, usize, usize),
    /// Inclusive range of segments per meeting.
    pub segments: (usize, usize),
    pub turn: TurnModel,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            train_meetings: 147,
            dev_meetings: 18,
            eval_meetings: 16,
            dim: 32,
            seed: 0,
            concentration: 20.0,
            speaker_population: (155, 21, 16),
            segments: (50, 300),
            turn: TurnModel::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Eval,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Eval => "eval",
        }
    }

    fn index(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Dev => 1,
            Split::Eval => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitCorpus {
    pub train: Vec<MeetingRecord>,
    pub dev: Vec<MeetingRecord>,
    pub eval: Vec<MeetingRecord>,
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        self.turn.validate()?;
        if self.dim < 2 {
            return Err(DncError::InvalidArgument(format!("dimension {} < 2", self.dim)));
        }
        if !(self.concentration > 0.0) {
            return Err(DncError::InvalidArgument("concentration must be positive".into()));
        }
        let (lo, hi) = self.segments;
        if lo == 0 || lo > hi {
            return Err(DncError::InvalidArgument(format!("segments range {lo}..={hi}")));
        }
        let max_spk = self.turn.speakers_per_meeting.1;
        if lo < max_spk * self.turn.min_segments_per_speaker.max(1) {
            return Err(DncError::InvalidArgument(format!(
                "{lo} segments too few for {max_spk} speakers"
            )));
        }
        let (a, b, c) = self.speaker_population;
        for (split, pop, meetings) in [
            ("train", a, self.train_meetings),
            ("dev", b, self.dev_meetings),
            ("eval", c, self.eval_meetings),
        ] {
            if meetings > 0 && pop < self.turn.speakers_per_meeting.1 {
                return Err(DncError::InvalidArgument(format!(
                    "{split} population of {pop} speakers is smaller than {max_spk} speakers per meeting"
                )));
            }
        }
        Ok(())
    }

    fn speaker_population(&self, split: Split) -> Result<Vec<(String, SpeakerModel)>> {
        let (a, b, c) = self.speaker_population;
        let size = match split {
            Split::Train => a,
            Split::Dev => b,
            Split::Eval => c,
        };
        (0..size)
            .map(|i| {
                let mut rng = rng::stream(self.seed, &[rng::tag::CORPUS, split.index(), 1 << 32, i as u64]);
                let spk = gen_speaker(self.dim, self.concentration, &mut rng)?;
                Ok((format!("{}-spk{i:03}", split.name()), spk))
            })
            .collect()
    }

    pub fn generate_split(&self, split: Split) -> Result<Vec<MeetingRecord>> {
        self.validate()?;
        let meetings = match split {
            Split::Train => self.train_meetings,
            Split::Dev => self.dev_meetings,
            Split::Eval => self.eval_meetings,
        };
        if meetings == 0 {
            return Ok(Vec::new());
        }
        let population = self.speaker_population(split)?;
        (0..meetings)
            .map(|m| {
                let mut rng: DncRng = rng::stream(self.seed, &[rng::tag::CORPUS, split.index(), m as u64]);
                let (lo, hi) = self.turn.speakers_per_meeting;
                let k = rng.random_range(lo..=hi).min(population.len());
                let chosen: Vec<(String, SpeakerModel)> = index::sample(&mut rng, population.len(), k)
                    .into_iter()
                    .map(|i| population[i].clone())
                    .collect();
                let n = rng.random_range(self.segments.0..=self.segments.1);
                gen_meeting(&format!("{}-{m:03}", split.name()), &chosen, n, &self.turn, &mut rng)
            })
            .collect()
    }

    pub fn generate(&self) -> Result<SplitCorpus> {
        Ok(SplitCorpus {
            train: self.generate_split(Split::Train)?,
            dev: self.generate_split(Split::Dev)?,
            eval: self.generate_split(Split::Eval)?,
        })
    }
}
