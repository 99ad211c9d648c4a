//! Diarisation scoring with oracle segmentation.
//!
//! Times are handled in integer milliseconds. Reference speech within
//! `collar` of a reference speaker-turn boundary is not scored, except at
//! the very start and end of the recording, and neither is speech where two
//! or more reference speakers are active. Hypothesis labels are mapped one to
//! one onto reference speakers so as to maximise the matched scored time.

mod assignment;

use std::collections::{BTreeMap, HashMap};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use assignment::max_weight_assignment;

use crate::error::{DncError, Result};
use crate::labels::canonical_labels;
use crate::types::MeetingRecord;

pub const DEFAULT_COLLAR_S: f64 = 0.25;

/// A speaker label active over `[start, end)` seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Turn {
    pub start: f64,
    pub end: f64,
    pub speaker: usize,
}

/// Error breakdown for one meeting or a whole corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub scored_time_s: f64,
    pub missed_s: f64,
    pub false_alarm_s: f64,
    pub speaker_error_s: f64,
    pub ser_percent: f64,
    pub der_percent: f64,
    /// Hypothesis label to reference speaker; empty for aggregates.
    pub mapping: BTreeMap<usize, String>,
}

impl ScoreReport {
    fn from_ms(scored: i64, missed: i64, false_alarm: i64, error: i64, mapping: BTreeMap<usize, String>) -> Self {
        let s = scored as f64;
        Self {
            scored_time_s: s / 1000.0,
            missed_s: missed as f64 / 1000.0,
            false_alarm_s: false_alarm as f64 / 1000.0,
            speaker_error_s: error as f64 / 1000.0,
            ser_percent: 100.0 * error as f64 / s,
            der_percent: 100.0 * (missed + false_alarm + error) as f64 / s,
            mapping,
        }
    }
}

/// Scores of every meeting plus their duration-weighted aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub total: ScoreReport,
    pub meetings: Vec<MeetingScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeetingScore {
    pub meeting_id: String,
    pub report: ScoreReport,
}

fn to_ms(t: f64) -> i64 {
    (t * 1000.0).round() as i64
}

/// Millisecond totals and the hypothesis-to-reference assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct TimelineScore {
    pub scored_ms: i64,
    pub missed_ms: i64,
    pub false_alarm_ms: i64,
    pub error_ms: i64,
    pub mapping: BTreeMap<usize, usize>,
}

/// Union of each speaker's turns.
fn speaker_turns(reference: &[(i64, i64, usize)]) -> Vec<(i64, i64)> {
    let mut by_speaker: BTreeMap<usize, Vec<(i64, i64)>> = BTreeMap::new();
    for &(s, e, spk) in reference {
        by_speaker.entry(spk).or_default().push((s, e));
    }
    let mut out = Vec::new();
    for (_, mut iv) in by_speaker {
        iv.sort_unstable();
        let mut cur = iv[0];
        for &(s, e) in &iv[1..] {
            if s <= cur.1 {
                cur.1 = cur.1.max(e);
            } else {
                out.push(cur);
                cur = (s, e);
            }
        }
        out.push(cur);
    }
    out
}

/// Scores a hypothesis timeline against a reference timeline.
pub fn score_turns(reference: &[Turn], hypothesis: &[Turn], collar_s: f64) -> Result<TimelineScore> {
    if !(collar_s >= 0.0 && collar_s.is_finite()) {
        return Err(DncError::InvalidArgument(format!("collar {collar_s} must be non-negative")));
    }
    let to_ms_turns = |turns: &[Turn]| -> Vec<(i64, i64, usize)> {
        turns.iter().map(|t| (to_ms(t.start), to_ms(t.end), t.speaker)).filter(|t| t.0 < t.1).collect()
    };
    let reference = to_ms_turns(reference);
    let hypothesis = to_ms_turns(hypothesis);
    if reference.is_empty() {
        return Err(DncError::ZeroScoredTime("reference has no speech".into()));
    }
    let collar = to_ms(collar_s);

    let mut ref_index: BTreeMap<usize, usize> = BTreeMap::new();
    for t in &reference {
        let next = ref_index.len();
        ref_index.entry(t.2).or_insert(next);
    }
    let mut hyp_index: BTreeMap<usize, usize> = BTreeMap::new();
    for t in &hypothesis {
        let next = hyp_index.len();
        hyp_index.entry(t.2).or_insert(next);
    }

    let extent = (
        reference.iter().map(|t| t.0).min().unwrap_or(0),
        reference.iter().map(|t| t.1).max().unwrap_or(0),
    );
    let mut collars = Vec::new();
    for (s, e) in speaker_turns(&reference) {
        for b in [s, e] {
            if b > extent.0 && b < extent.1 && collar > 0 {
                collars.push((b - collar, b + collar));
            }
        }
    }

    // Event sweep: (time, kind, index, delta) with kind 0 = reference,
    // 1 = hypothesis, 2 = collar.
    let mut events: Vec<(i64, u8, usize, i32)> = Vec::new();
    for &(s, e, spk) in &reference {
        events.push((s, 0, ref_index[&spk], 1));
        events.push((e, 0, ref_index[&spk], -1));
    }
    for &(s, e, lab) in &hypothesis {
        events.push((s, 1, hyp_index[&lab], 1));
        events.push((e, 1, hyp_index[&lab], -1));
    }
    for &(s, e) in &collars {
        events.push((s, 2, 0, 1));
        events.push((e, 2, 0, -1));
    }
    events.sort_unstable();

    let mut ref_active = vec![0i32; ref_index.len()];
    let mut hyp_active = vec![0i32; hyp_index.len()];
    let mut in_collar = 0i32;
    // Scored pieces: (duration, reference speaker, active hypothesis labels).
    let mut pieces: Vec<(i64, usize, Vec<usize>)> = Vec::new();
    let mut i = 0;
    while i < events.len() {
        let t = events[i].0;
        while i < events.len() && events[i].0 == t {
            let (_, kind, idx, delta) = events[i];
            match kind {
                0 => ref_active[idx] += delta,
                1 => hyp_active[idx] += delta,
                _ => in_collar += delta,
            }
            i += 1;
        }
        let Some(&(next, ..)) = events.get(i) else { break };
        let mut refs = ref_active.iter().enumerate().filter(|(_, &c)| c > 0).map(|(r, _)| r);
        if let (Some(r), None, 0) = (refs.next(), refs.next(), in_collar) {
            let hyps: Vec<usize> = hyp_active.iter().enumerate().filter(|(_, &c)| c > 0).map(|(h, _)| h).collect();
            pieces.push((next - t, r, hyps));
        }
    }

    let scored: i64 = pieces.iter().map(|p| p.0).sum();
    if scored == 0 {
        return Err(DncError::ZeroScoredTime("no reference speech remains after collar and overlap removal".into()));
    }
    let mut overlap = Array2::<f64>::zeros((hyp_index.len(), ref_index.len()));
    for (len, r, hyps) in &pieces {
        for &h in hyps {
            overlap[[h, *r]] += *len as f64;
        }
    }
    let assignment = max_weight_assignment(&overlap);
    let (mut missed, mut false_alarm, mut error) = (0, 0, 0);
    for (len, r, hyps) in &pieces {
        if hyps.is_empty() {
            missed += len;
            continue;
        }
        false_alarm += len * (hyps.len() as i64 - 1);
        if !hyps.iter().any(|&h| assignment[h] == Some(*r)) {
            error += len;
        }
    }
    let ref_labels: Vec<usize> = ref_index.keys().copied().collect();
    let mapping = hyp_index
        .iter()
        .filter_map(|(&label, &h)| assignment[h].map(|r| (label, ref_labels[r])))
        .collect();
    Ok(TimelineScore { scored_ms: scored, missed_ms: missed, false_alarm_ms: false_alarm, error_ms: error, mapping })
}

fn meeting_turns(reference: &MeetingRecord, hyp: &[usize]) -> Result<(Vec<Turn>, Vec<Turn>)> {
    if hyp.len() != reference.len() {
        return Err(DncError::DimensionMismatch(format!(
            "meeting `{}` has {} segments, hypothesis has {} labels",
            reference.meeting_id,
            reference.len(),
            hyp.len()
        )));
    }
    let speakers = canonical_labels(reference.identities.as_slice());
    let r = reference.spans.iter().zip(&speakers).map(|(s, &k)| Turn { start: s.start, end: s.end, speaker: k }).collect();
    let h = reference.spans.iter().zip(hyp).map(|(s, &k)| Turn { start: s.start, end: s.end, speaker: k }).collect();
    Ok((r, h))
}

/// One-to-one map from hypothesis labels to reference speakers maximising
/// matched scored time.
pub fn optimal_mapping(reference: &MeetingRecord, hyp: &[usize], collar_s: f64) -> Result<BTreeMap<usize, String>> {
    Ok(ser(reference, hyp, collar_s)?.mapping)
}

/// Speaker error rate of one meeting with oracle segmentation.
pub fn ser(reference: &MeetingRecord, hyp: &[usize], collar_s: f64) -> Result<ScoreReport> {
    let (r, h) = meeting_turns(reference, hyp)?;
    let t = score_turns(&r, &h, collar_s)
        .map_err(|e| match e {
            DncError::ZeroScoredTime(m) => DncError::ZeroScoredTime(format!("meeting `{}`: {m}", reference.meeting_id)),
            other => other,
        })?;
    let mut names: HashMap<usize, &str> = HashMap::new();
    for (k, id) in canonical_labels(reference.identities.as_slice()).into_iter().zip(reference.identities.as_slice()) {
        names.insert(k, id);
    }
    let mapping = t.mapping.iter().map(|(&h, r)| (h, names[r].to_string())).collect();
    Ok(ScoreReport::from_ms(t.scored_ms, t.missed_ms, t.false_alarm_ms, t.error_ms, mapping))
}

/// Scores every meeting of `corpus` and aggregates by total scored time.
pub fn batch_score(corpus: &[MeetingRecord], hyps: &BTreeMap<String, Vec<usize>>, collar_s: f64) -> Result<BatchReport> {
    let mut meetings = Vec::with_capacity(corpus.len());
    let (mut scored, mut missed, mut fa, mut err) = (0i64, 0i64, 0i64, 0i64);
    for m in corpus {
        let hyp = hyps.get(&m.meeting_id).ok_or_else(|| DncError::MissingHypothesis(m.meeting_id.clone()))?;
        let report = ser(m, hyp, collar_s)?;
        scored += to_ms(report.scored_time_s);
        missed += to_ms(report.missed_s);
        fa += to_ms(report.false_alarm_s);
        err += to_ms(report.speaker_error_s);
        meetings.push(MeetingScore { meeting_id: m.meeting_id.clone(), report });
    }
    if scored == 0 {
        return Err(DncError::ZeroScoredTime("corpus has no scored time".into()));
    }
    Ok(BatchReport { total: ScoreReport::from_ms(scored, missed, fa, err, BTreeMap::new()), meetings })
}

#[cfg(test)]
mod tests;
