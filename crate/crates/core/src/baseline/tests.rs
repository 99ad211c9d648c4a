use ndarray::{array, Array2};
use proptest::prelude::*;

use super::*;
use crate::augment::{diaconis_augment, sample_rotation};
use crate::labels::relabel_equivalent;
use crate::linalg::max_abs_diff;
use crate::rng::stream;
use crate::score::ser;
use crate::synth::{CorpusSpec, Split, TurnModel};

fn blocks(sizes: &[usize]) -> AffinityMatrix {
    let n: usize = sizes.iter().sum();
    let mut a = Array2::zeros((n, n));
    let mut start = 0;
    for &s in sizes {
        a.slice_mut(s![start..start + s, start..start + s]).fill(1.0);
        start += s;
    }
    AffinityMatrix::new(a).unwrap()
}

fn separable_meetings(seed: u64, concentration: f64) -> Vec<MeetingRecord> {
    CorpusSpec {
        train_meetings: 4,
        dev_meetings: 0,
        eval_meetings: 0,
        seed,
        concentration,
        segments: (30, 60),
        turn: TurnModel { speakers_per_meeting: (3, 3), ..TurnModel::default() },
        ..CorpusSpec::default()
    }
    .generate_split(Split::Train)
    .unwrap()
}

#[test]
fn affinity_examples() {
    let x = EmbeddingSequence::new(array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]]).unwrap();
    let a = cosine_affinity(&x);
    assert_eq!(a.data()[[0, 1]], 1.0);
    assert_eq!(a.data()[[0, 2]], 0.5);
    assert_eq!(a.data()[[0, 3]], 0.0);
}

#[test]
fn refine_without_thresholding_or_diffusion_only_normalises() {
    let x = EmbeddingSequence::new(array![[1.0, 0.0], [0.6, 0.8], [0.0, 1.0]]).unwrap();
    let a = cosine_affinity(&x);
    let r = refine(&a, &RefineConfig { p: 1.0, diffusion: false }).unwrap();
    let mut expected = a.data().to_owned();
    for i in 0..3 {
        expected[[i, i]] = (0..3).filter(|&j| j != i).map(|j| expected[[i, j]]).fold(0.0, f64::max);
    }
    let m: Vec<f64> = (0..3).map(|i| expected.row(i).fold(0.0f64, |a, &b| a.max(b))).collect();
    for i in 0..3 {
        for j in 0..3 {
            expected[[i, j]] /= (m[i] * m[j]).sqrt();
        }
    }
    assert!(max_abs_diff(r.data(), expected.view()) < 1e-15);
    assert!(refine(&a, &RefineConfig { p: 0.0, diffusion: false }).is_err());
    assert!(refine(&a, &RefineConfig { p: 1.5, diffusion: false }).is_err());
}

#[test]
fn refinement_sharpens_blocks_and_stays_symmetric() {
    let eps = 0.2;
    let mut a = Array2::from_elem((6, 6), eps);
    a.slice_mut(s![..3, ..3]).fill(1.0);
    a.slice_mut(s![3.., 3..]).fill(1.0);
    let a = AffinityMatrix::new(a).unwrap();
    for cfg in [RefineConfig { p: 0.5, diffusion: true }, RefineConfig { p: 0.5, diffusion: false }] {
        let r = refine(&a, &cfg).unwrap();
        let d = r.data();
        assert!(d[[0, 4]] / d[[0, 1]] <= eps + 1e-12, "{cfg:?}");
        assert!(AffinityMatrix::new(r.clone().into_inner()).is_ok());
    }
}

#[test]
fn eigengap_on_block_matrices() {
    let two = blocks(&[3, 3]);
    let e = eigengap(&two, 2, 4).unwrap();
    let expected = [3.0, 3.0, 0.0, 0.0, 0.0, 0.0];
    for (v, x) in e.eigenvalues.iter().zip(expected) {
        assert!((v - x).abs() < 1e-12);
    }
    assert_eq!(e.count, 2);
    assert_eq!(eigengap_count(&blocks(&[3, 2, 4, 3]), 2, 4).unwrap(), 4);
    let one = eigengap(&blocks(&[5]), 2, 4).unwrap();
    assert_eq!(one.count, 2);
    assert!(one.floor_applied);
    assert!(eigengap_count(&blocks(&[1]), 2, 4).is_err());
    let scaled = AffinityMatrix::new(blocks(&[3, 2, 4]).into_inner() * 7.5).unwrap();
    assert_eq!(eigengap_count(&scaled, 2, 4).unwrap(), 3);
}

#[test]
fn two_orthogonal_points_make_two_clusters() {
    let x = EmbeddingSequence::new(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
    let r = spectral_cluster(&x, &SpectralConfig::default()).unwrap();
    assert_eq!(r.labels.as_slice(), &[1, 2]);
}

#[test]
fn separable_speakers_are_recovered_exactly() {
    for m in separable_meetings(3, 2000.0) {
        let r = spectral_cluster(&m.embeddings, &SpectralConfig::default()).unwrap();
        assert_eq!(r.clusters, 3);
        assert_eq!(ser(&m, r.labels.as_slice(), 0.25).unwrap().ser_percent, 0.0);
    }
}

#[test]
fn tuning_picks_a_grid_point() {
    let dev = separable_meetings(4, 200.0);
    let (cfg, ser) = tune_on_dev(&dev, &SpectralConfig::default(), &[0.2, 0.5], 0.25).unwrap();
    assert!([0.2, 0.5].contains(&cfg.refine.p));
    assert!(ser >= 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]
    #[test]
    fn rotation_does_not_change_the_partition(seed in 0u64..1000) {
        let m = &separable_meetings(seed, 300.0)[0];
        let r = sample_rotation(m.dim(), &mut stream(seed, &[1])).unwrap();
        let rotated = diaconis_augment(m, &r).unwrap();
        let cfg = SpectralConfig::default();
        let a = spectral_cluster(&m.embeddings, &cfg).unwrap();
        let b = spectral_cluster(&rotated.embeddings, &cfg).unwrap();
        prop_assert!(relabel_equivalent(a.labels.as_slice(), b.labels.as_slice()).unwrap());
    }

    #[test]
    fn duplicating_points_duplicates_labels(seed in 0u64..1000) {
        let m = &separable_meetings(seed, 300.0)[0];
        let n = m.len();
        let doubled = ndarray::concatenate![ndarray::Axis(0), m.embeddings.data(), m.embeddings.data()];
        let cfg = SpectralConfig::default();
        let a = spectral_cluster(&m.embeddings, &cfg).unwrap();
        let b = spectral_cluster(&EmbeddingSequence::new(doubled).unwrap(), &cfg).unwrap();
        let twice: Vec<usize> = a.labels.as_slice().iter().chain(a.labels.as_slice()).copied().collect();
        prop_assert!(relabel_equivalent(&twice, b.labels.as_slice()).unwrap(), "n = {}", n);
    }
}
