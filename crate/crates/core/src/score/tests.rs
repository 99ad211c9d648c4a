use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;

use super::*;
use crate::rng::stream;
use crate::types::{EmbeddingSequence, IdentitySequence, Span};

fn meeting(id: &str, segments: &[(f64, f64, &str)]) -> MeetingRecord {
    let n = segments.len();
    let mut emb = Array2::zeros((n, 2));
    emb.column_mut(0).fill(1.0);
    MeetingRecord::new(
        id,
        EmbeddingSequence::new(emb).unwrap(),
        segments.iter().map(|s| s.2).collect::<IdentitySequence>(),
        segments.iter().map(|s| Span::new(s.0, s.1)).collect(),
    )
    .unwrap()
}

#[test]
fn worked_example() {
    let m = meeting("m", &[(0.0, 4.0, "A"), (4.0, 6.0, "A"), (6.0, 10.0, "A"), (10.0, 20.0, "B")]);
    let r = ser(&m, &[1, 2, 1, 2], 0.25).unwrap();
    assert_eq!(r.scored_time_s, 19.5);
    assert_eq!(r.speaker_error_s, 2.0);
    assert!((r.ser_percent - 10.26).abs() < 0.005, "{}", r.ser_percent);
    assert_eq!(r.missed_s, 0.0);
    assert_eq!(r.false_alarm_s, 0.0);
    assert_eq!(r.mapping[&1], "A");
    assert_eq!(r.mapping[&2], "B");
}

#[test]
fn perfect_and_permuted_hypotheses() {
    let m = meeting("m", &[(0.0, 3.0, "x"), (3.0, 5.0, "y"), (5.0, 9.0, "x"), (9.0, 9.5, "z")]);
    let truth = m.labels().into_vec();
    assert_eq!(ser(&m, &truth, 0.25).unwrap().ser_percent, 0.0);
    assert_eq!(ser(&m, &[7, 3, 7, 1], 0.25).unwrap().ser_percent, 0.0);
}

#[test]
fn huge_collar_leaves_nothing_to_score() {
    let m = meeting("m", &[(0.0, 1.0, "a"), (1.0, 2.0, "b")]);
    assert!(matches!(ser(&m, &[1, 2], 5.0), Err(DncError::ZeroScoredTime(_))));
}

#[test]
fn overlapped_speech_is_not_scored() {
    let m = meeting("m", &[(0.0, 6.0, "a"), (4.0, 10.0, "b")]);
    let r = ser(&m, &[1, 1], 0.0).unwrap();
    // [4, 6) is overlapped; one of the two remaining 4 s stretches is wrong.
    assert_eq!(r.scored_time_s, 8.0);
    assert_eq!(r.speaker_error_s, 4.0);
}

#[test]
fn batch_weights_by_scored_time() {
    let a = meeting("a", &[(0.0, 10.0, "p"), (10.0, 20.0, "q")]);
    let b = meeting("b", &[(0.0, 10.0, "p"), (10.0, 20.0, "q")]);
    let mut hyps = BTreeMap::new();
    hyps.insert("a".to_string(), vec![1, 2]);
    hyps.insert("b".to_string(), vec![1, 1]);
    let rb = ser(&b, &[1, 1], 0.0).unwrap();
    assert_eq!(rb.ser_percent, 50.0);
    let batch = batch_score(&[a.clone(), b.clone()], &hyps, 0.0).unwrap();
    assert_eq!(batch.total.ser_percent, 25.0);
    let single = batch_score(std::slice::from_ref(&b), &hyps, 0.0).unwrap();
    assert_eq!(single.total.ser_percent, rb.ser_percent);
    hyps.remove("b");
    match batch_score(&[a, b], &hyps, 0.0) {
        Err(DncError::MissingHypothesis(m)) => assert_eq!(m, "b"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn report_json_round_trip() {
    let m = meeting("m", &[(0.0, 4.0, "A"), (4.0, 20.0, "B")]);
    let r = ser(&m, &[1, 2], 0.25).unwrap();
    let text = serde_json::to_string(&r).unwrap();
    assert_eq!(serde_json::from_str::<ScoreReport>(&text).unwrap(), r);
}

/// Random meeting whose segments may partially overlap. Times are whole
/// milliseconds.
fn random_meeting(seed: u64, overlaps: bool) -> MeetingRecord {
    let mut rng = stream(seed, &[]);
    let n = rng.random_range(1..9);
    let names = ["a", "b", "c"];
    let mut segs: Vec<(f64, f64, &str)> = Vec::new();
    let (mut prev_start, mut prev_end) = (0i64, 0i64);
    for i in 0..n {
        let start = if i > 0 && overlaps && rng.random_bool(0.3) {
            (prev_end - rng.random_range(1..500)).max(prev_start + 1)
        } else if i > 0 && rng.random_bool(0.2) {
            prev_end + rng.random_range(1..800)
        } else {
            prev_end
        };
        let end = (start + rng.random_range(1..3000)).max(prev_end + 1);
        segs.push((start as f64 / 1000.0, end as f64 / 1000.0, names[rng.random_range(0..3)]));
        (prev_start, prev_end) = (start, end);
    }
    meeting("r", &segs)
}

/// Scores on a one-millisecond grid with exhaustive mapping search.
fn brute_force(m: &MeetingRecord, hyp: &[usize], collar_s: f64) -> Option<(i64, i64)> {
    let ms = |t: f64| (t * 1000.0).round() as i64;
    let speakers: Vec<&str> = m.identities.as_slice().iter().map(String::as_str).collect();
    let start = m.spans.iter().map(|s| ms(s.start)).min().unwrap();
    let end = m.spans.iter().map(|s| ms(s.end)).max().unwrap();
    let active = |t: i64| -> BTreeSet<&str> {
        m.spans.iter().zip(&speakers).filter(|(s, _)| ms(s.start) <= t && t < ms(s.end)).map(|(_, &k)| k).collect()
    };
    let mut boundaries = Vec::new();
    for spk in speakers.iter().collect::<BTreeSet<_>>() {
        for t in start + 1..end {
            if active(t - 1).contains(*spk) != active(t).contains(*spk) {
                boundaries.push(t);
            }
        }
    }
    let c = ms(collar_s);
    let mut grid = Vec::new();
    for t in start..end {
        let refs = active(t);
        if refs.len() != 1 || boundaries.iter().any(|&b| b - c <= t && t < b + c) {
            continue;
        }
        let hyps: BTreeSet<usize> =
            m.spans.iter().zip(hyp).filter(|(s, _)| ms(s.start) <= t && t < ms(s.end)).map(|(_, &h)| h).collect();
        grid.push((*refs.iter().next().unwrap(), hyps));
    }
    if grid.is_empty() {
        return None;
    }
    let labels: Vec<usize> = hyp.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let names: Vec<&str> = speakers.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let mut best = 0;
    let mut choice = vec![0usize; labels.len()];
    loop {
        let used: Vec<usize> = choice.iter().copied().filter(|&c| c > 0).collect();
        if used.iter().collect::<BTreeSet<_>>().len() == used.len() {
            let matched = grid
                .iter()
                .filter(|(r, hs)| {
                    hs.iter().any(|h| {
                        let c = choice[labels.iter().position(|l| l == h).unwrap()];
                        c > 0 && names[c - 1] == *r
                    })
                })
                .count() as i64;
            best = best.max(matched);
        }
        let mut i = 0;
        while i < choice.len() && choice[i] == names.len() {
            choice[i] = 0;
            i += 1;
        }
        if i == choice.len() {
            break;
        }
        choice[i] += 1;
    }
    let scored = grid.len() as i64;
    Some((scored, scored - best))
}

#[test]
fn matches_millisecond_grid_oracle() {
    let mut rng = stream(99, &[]);
    for seed in 0..150 {
        let m = random_meeting(seed, seed % 2 == 0);
        let hyp: Vec<usize> = (0..m.len()).map(|_| rng.random_range(1..4)).collect();
        for collar in [0.0, 0.1, 0.25] {
            let oracle = brute_force(&m, &hyp, collar);
            match (ser(&m, &hyp, collar), oracle) {
                (Ok(r), Some((scored, error))) => {
                    assert_eq!((to_ms(r.scored_time_s), to_ms(r.speaker_error_s)), (scored, error), "seed {seed} collar {collar}");
                }
                (Err(DncError::ZeroScoredTime(_)), None) => {}
                (got, want) => panic!("seed {seed}: {got:?} vs {want:?}"),
            }
        }
    }
}

#[test]
fn batch_matches_sum_of_grid_oracles() {
    let corpus: Vec<MeetingRecord> = (0..6)
        .map(|s| {
            let mut m = random_meeting(500 + s, true);
            m.meeting_id = format!("m{s}");
            m
        })
        .collect();
    let mut rng = stream(7, &[]);
    let hyps: BTreeMap<String, Vec<usize>> =
        corpus.iter().map(|m| (m.meeting_id.clone(), (0..m.len()).map(|_| rng.random_range(1..4)).collect())).collect();
    let (mut scored, mut error) = (0, 0);
    for m in &corpus {
        let (s, e) = brute_force(m, &hyps[&m.meeting_id], 0.0).unwrap();
        scored += s;
        error += e;
    }
    let batch = batch_score(&corpus, &hyps, 0.0).unwrap();
    assert_eq!(to_ms(batch.total.scored_time_s), scored);
    assert_eq!(to_ms(batch.total.speaker_error_s), error);
}

proptest! {
    #[test]
    fn ser_ignores_label_names(seed in 0u64..10_000, offset in 1usize..50) {
        let m = random_meeting(seed, true);
        let mut rng = stream(seed, &[1]);
        let hyp: Vec<usize> = (0..m.len()).map(|_| rng.random_range(1..4)).collect();
        let renamed: Vec<usize> = hyp.iter().map(|&h| (4 - h) * 7 + offset).collect();
        match (ser(&m, &hyp, 0.25), ser(&m, &renamed, 0.25)) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a.speaker_error_s, b.speaker_error_s),
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "{:?} vs {:?}", a, b),
        }
    }

    #[test]
    fn more_wrong_segments_never_reduce_error(seed in 0u64..10_000) {
        let m = random_meeting(seed, false);
        let truth = m.labels().into_vec();
        let k = m.num_speakers();
        let dur = |i: usize| m.spans[i].duration();
        let mut total = vec![0.0; k + 1];
        for (i, &l) in truth.iter().enumerate() {
            total[l] += dur(i);
        }
        let mut hyp = truth.clone();
        let mut flipped = vec![0.0; k + 1];
        let mut prev_error = if let Ok(r) = ser(&m, &hyp, 0.0) { r.speaker_error_s } else { return Ok(()) };
        prop_assert_eq!(prev_error, 0.0);
        let mut rng = stream(seed, &[2]);
        for i in rand::seq::index::sample(&mut rng, m.len(), m.len()) {
            let l = truth[i];
            // Keep every speaker mostly correct so the identity mapping stays optimal.
            if k < 2 || 2.0 * (flipped[l] + dur(i)) >= total[l] {
                continue;
            }
            flipped[l] += dur(i);
            hyp[i] = l % k + 1;
            let r = ser(&m, &hyp, 0.0).unwrap();
            prop_assert!(r.speaker_error_s >= prev_error);
            let mislabelled: f64 = flipped.iter().sum();
            prop_assert!((r.speaker_error_s - mislabelled).abs() < 1e-9);
            prev_error = r.speaker_error_s;
        }
    }
}
