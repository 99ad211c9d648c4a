//! Refined spectral clustering: cosine affinity, affinity refinement,
//! eigengap model selection and cosine K-means on the spectral embedding.

mod kmeans;

use std::collections::BTreeMap;

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

pub use kmeans::{kmeans_cosine, KMeansResult};

use crate::error::{DncError, Result};
use crate::labels::canonical_labels;
use crate::linalg::symmetric_eigen;
use crate::rng::{stream, tag};
use crate::score::batch_score;
use crate::types::{CanonicalLabelSequence, EmbeddingSequence, MeetingRecord};

const SYMMETRY_TOLERANCE: f64 = 1e-10;

/// Symmetric N×N similarity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix(Array2<f64>);

impl AffinityMatrix {
    pub fn new(a: Array2<f64>) -> Result<Self> {
        let (r, c) = a.dim();
        if r != c {
            return Err(DncError::DimensionMismatch(format!("affinity is {r}×{c}")));
        }
        for i in 0..r {
            for j in 0..i {
                if (a[[i, j]] - a[[j, i]]).abs() > SYMMETRY_TOLERANCE || !a[[i, j]].is_finite() {
                    return Err(DncError::Validation(format!("affinity is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self(a))
    }

    pub fn data(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }
}

/// `(1 + cos) / 2` between every pair of rows.
pub fn cosine_affinity(x: &EmbeddingSequence) -> AffinityMatrix {
    let g = x.data().dot(&x.data().t());
    let mut a = g.mapv(|c| (1.0 + c.clamp(-1.0, 1.0)) / 2.0);
    // The Gram product is symmetric only up to rounding.
    let n = a.nrows();
    for i in 0..n {
        for j in 0..i {
            a[[j, i]] = a[[i, j]];
        }
    }
    AffinityMatrix(a)
}

/// Refinement settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineConfig {
    /// Fraction of each row kept by thresholding, in (0, 1].
    pub p: f64,
    /// Replace `A` by `A Aᵀ` after symmetrisation.
    pub diffusion: bool,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self { p: 0.2, diffusion: true }
    }
}

/// Diagonal to row maximum, per-row top-p thresholding, symmetrisation by
/// elementwise max, optional diffusion, then max normalisation
/// `A_ij / sqrt(m_i m_j)` with `m` the row maxima.
pub fn refine(a: &AffinityMatrix, config: &RefineConfig) -> Result<AffinityMatrix> {
    if !(config.p > 0.0 && config.p <= 1.0) {
        return Err(DncError::InvalidArgument(format!("p = {} outside (0, 1]", config.p)));
    }
    let n = a.len();
    let mut m = a.0.clone();
    for i in 0..n {
        let off_max = (0..n).filter(|&j| j != i).map(|j| m[[i, j]]).fold(f64::NEG_INFINITY, f64::max);
        if off_max.is_finite() {
            m[[i, i]] = off_max;
        }
    }
    let keep = ((config.p * n as f64).ceil() as usize).clamp(1, n.max(1));
    if keep < n {
        for mut row in m.rows_mut() {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&x, &y| row[y].total_cmp(&row[x]).then(x.cmp(&y)));
            for &j in &order[keep..] {
                row[j] = 0.0;
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            let v = m[[i, j]].max(m[[j, i]]);
            m[[i, j]] = v;
            m[[j, i]] = v;
        }
    }
    if config.diffusion {
        m = m.dot(&m.t());
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (m[[i, j]] + m[[j, i]]);
                m[[i, j]] = v;
                m[[j, i]] = v;
            }
        }
    }
    let row_max: Vec<f64> = m.rows().into_iter().map(|r| r.fold(0.0f64, |a, &b| a.max(b))).collect();
    for i in 0..n {
        for j in 0..n {
            let d = (row_max[i] * row_max[j]).sqrt();
            m[[i, j]] = if d > 0.0 { m[[i, j]] / d } else { 0.0 };
        }
    }
    Ok(AffinityMatrix(m))
}

/// `D^{-1/2} A D^{-1/2}` with `D` the row sums.
pub fn degree_normalise(a: &AffinityMatrix) -> AffinityMatrix {
    let d: Vec<f64> = a.0.rows().into_iter().map(|r| r.sum()).collect();
    let n = a.len();
    let mut m = a.0.clone();
    for i in 0..n {
        for j in 0..n {
            let s = (d[i] * d[j]).sqrt();
            m[[i, j]] = if s > 0.0 { m[[i, j]] / s } else { 0.0 };
        }
    }
    AffinityMatrix(m)
}

/// Cluster count chosen by the eigengap.
#[derive(Debug, Clone, PartialEq)]
pub struct EigengapChoice {
    pub count: usize,
    /// The unconstrained largest gap suggests fewer than `k_min` clusters.
    pub floor_applied: bool,
    /// Eigenvalues in descending order.
    pub eigenvalues: Vec<f64>,
}

/// `argmax_{k in [k_min, k_max]} λ_k - λ_{k+1}` over descending eigenvalues,
/// with `λ_{N+1} = 0`. Gaps within `1e-10 λ_1` of each other count as ties,
/// which go to the smaller `k`.
pub fn eigengap_count(a: &AffinityMatrix, k_min: usize, k_max: usize) -> Result<usize> {
    Ok(eigengap(a, k_min, k_max)?.count)
}

pub fn eigengap(a: &AffinityMatrix, k_min: usize, k_max: usize) -> Result<EigengapChoice> {
    let n = a.len();
    if k_min == 0 || k_min > k_max {
        return Err(DncError::InvalidArgument(format!("cluster range [{k_min}, {k_max}] is empty")));
    }
    if n < k_min {
        return Err(DncError::InvalidArgument(format!("{n} segments cannot form {k_min} clusters")));
    }
    let values = symmetric_eigen(a.data()).values.to_vec();
    let lambda = |k: usize| if k <= n { values[k - 1] } else { 0.0 };
    let gap = |k: usize| lambda(k) - lambda(k + 1);
    let tie = 1e-10 * values[0].abs().max(f64::MIN_POSITIVE);
    let upper = k_max.min(n);
    let mut count = k_min;
    for k in k_min..=upper {
        if gap(k) > gap(count) + tie {
            count = k;
        }
    }
    let floor_applied = (1..k_min).any(|k| gap(k) > gap(count) + tie);
    Ok(EigengapChoice { count, floor_applied, eigenvalues: values })
}

/// Full baseline configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectralConfig {
    pub refine: RefineConfig,
    /// Work with `D^{-1/2} A D^{-1/2}` (one minus the normalised Laplacian)
    /// instead of `A` for the eigengap and the spectral embedding.
    pub normalized: bool,
    pub k_min: usize,
    pub k_max: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self { refine: RefineConfig::default(), normalized: true, k_min: 2, k_max: 4, restarts: 10, seed: 0 }
    }
}

impl SpectralConfig {
    /// One-line description of the pipeline for report headers.
    pub fn describe(&self) -> String {
        format!(
            "cosine affinity (1+cos)/2; diagonal := row max; keep top {:.0}% per row; max-symmetrise; diffusion {}; \
             max-normalise; eigengap on {} in k = [{}, {}]; cosine k-means, {} restarts",
            100.0 * self.refine.p,
            if self.refine.diffusion { "on" } else { "off" },
            if self.normalized { "D^-1/2 A D^-1/2" } else { "A" },
            self.k_min,
            self.k_max,
            self.restarts
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralResult {
    pub labels: CanonicalLabelSequence,
    pub clusters: usize,
    pub floor_applied: bool,
}

/// Clusters one sequence of embeddings. The K-means stream is derived from
/// `config.seed` alone, so results do not depend on call order.
pub fn spectral_cluster(x: &EmbeddingSequence, config: &SpectralConfig) -> Result<SpectralResult> {
    if x.len() < 2 {
        return Err(DncError::InvalidArgument("spectral clustering needs at least two segments".into()));
    }
    let mut refined = refine(&cosine_affinity(x), &config.refine)?;
    if config.normalized {
        refined = degree_normalise(&refined);
    }
    let choice = eigengap(&refined, config.k_min, config.k_max)?;
    let k = choice.count;
    let vectors = symmetric_eigen(refined.data()).vectors;
    let embedding = vectors.slice(s![.., ..k]);
    let mut rng = stream(config.seed, &[tag::KMEANS]);
    let km = kmeans_cosine(embedding, k, config.restarts, &mut rng)?;
    Ok(SpectralResult {
        labels: CanonicalLabelSequence::new_unchecked(canonical_labels(&km.assignment)),
        clusters: k,
        floor_applied: choice.floor_applied,
    })
}

/// Hypotheses for every meeting.
pub fn cluster_corpus(corpus: &[MeetingRecord], config: &SpectralConfig) -> Result<BTreeMap<String, Vec<usize>>> {
    corpus
        .iter()
        .map(|m| Ok((m.meeting_id.clone(), spectral_cluster(&m.embeddings, config)?.labels.into_vec())))
        .collect()
}

/// Grid search over `p` and diffusion on the dev split; returns the best
/// configuration and its dev SER. Ties keep the earliest grid point.
pub fn tune_on_dev(
    dev: &[MeetingRecord],
    base: &SpectralConfig,
    p_grid: &[f64],
    collar_s: f64,
) -> Result<(SpectralConfig, f64)> {
    let mut best: Option<(SpectralConfig, f64)> = None;
    for &diffusion in &[true, false] {
        for &p in p_grid {
            let cfg = SpectralConfig { refine: RefineConfig { p, diffusion }, ..*base };
            let hyps = cluster_corpus(dev, &cfg)?;
            let ser = batch_score(dev, &hyps, collar_s)?.total.ser_percent;
            if best.as_ref().is_none_or(|b| ser < b.1) {
                best = Some((cfg, ser));
            }
        }
    }
    best.ok_or_else(|| DncError::InvalidArgument("empty tuning grid".into()))
}

/// The default `p` grid searched on dev data.
pub const DEFAULT_P_GRID: [f64; 8] = [0.1, 0.15, 0.2, 0.3, 0.4, 0.5, 0.7, 1.0];

#[cfg(test)]
mod tests;
