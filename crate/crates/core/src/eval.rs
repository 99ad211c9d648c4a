//! Evaluation helpers: splitting meetings into sub-meetings, clustering a
//! corpus with either system and scoring the result.

use std::collections::BTreeMap;

use crate::augment::sub_sequence;
use crate::baseline::{spectral_cluster, SpectralConfig};
use crate::error::Result;
use crate::model::{Decoding, DncModel};
use crate::score::{batch_score, BatchReport};
use crate::types::MeetingRecord;

/// Splits every meeting into as few near-equal consecutive sub-meetings as
/// possible, none longer than `max_len`. Chunk `k` of meeting `m` is named
/// `m#k`; meetings that fit are kept whole under their own name.
pub fn split_for_eval(meetings: &[MeetingRecord], max_len: Option<usize>) -> Result<Vec<MeetingRecord>> {
    let mut out = Vec::new();
    for m in meetings {
        let n = m.len();
        let limit = max_len.unwrap_or(n).max(1);
        if n <= limit {
            out.push(m.clone());
            continue;
        }
        let parts = n.div_ceil(limit);
        let mut start = 0;
        for k in 0..parts {
            let len = n / parts + usize::from(k < n % parts);
            let mut chunk = sub_sequence(m, start + 1, start + len)?;
            chunk.meeting_id = format!("{}#{k}", m.meeting_id);
            out.push(chunk);
            start += len;
        }
    }
    Ok(out)
}

pub fn decode_corpus(model: &DncModel, meetings: &[MeetingRecord], decoding: Decoding) -> Result<BTreeMap<String, Vec<usize>>> {
    meetings
        .iter()
        .map(|m| Ok((m.meeting_id.clone(), model.cluster(&m.embeddings, decoding)?.into_vec())))
        .collect()
}

/// Mean per-label negative log-likelihood over a corpus, without dropout.
pub fn corpus_loss(model: &DncModel, meetings: &[MeetingRecord]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for m in meetings {
        let x = DncModel::prepare_input(&m.embeddings);
        let labels = m.labels();
        total -= model.sequence_log_prob(x.view(), labels.as_slice())?;
        count += labels.len();
    }
    Ok(total / count.max(1) as f64)
}

/// Splits, decodes and scores `meetings` with a DNC model.
pub fn evaluate_dnc(
    model: &DncModel,
    meetings: &[MeetingRecord],
    max_len: Option<usize>,
    decoding: Decoding,
    collar_s: f64,
) -> Result<BatchReport> {
    let chunks = split_for_eval(meetings, max_len)?;
    let hyps = decode_corpus(model, &chunks, decoding)?;
    batch_score(&chunks, &hyps, collar_s)
}

/// Splits, clusters and scores `meetings` with the spectral baseline.
pub fn evaluate_spectral(
    config: &SpectralConfig,
    meetings: &[MeetingRecord],
    max_len: Option<usize>,
    collar_s: f64,
) -> Result<BatchReport> {
    let chunks = split_for_eval(meetings, max_len)?;
    let hyps = chunks
        .iter()
        .map(|m| {
            // A single segment is trivially one speaker.
            let labels = if m.len() < 2 { vec![1; m.len()] } else { spectral_cluster(&m.embeddings, config)?.labels.into_vec() };
            Ok((m.meeting_id.clone(), labels))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;
    batch_score(&chunks, &hyps, collar_s)
}
