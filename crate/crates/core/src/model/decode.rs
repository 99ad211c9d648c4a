//! Incremental decoding with cached keys and values.

use ndarray::{s, Array1, ArrayView1, ArrayView2};

use super::layers::{feed_forward_row, layer_norm_row, log_sum_exp, sinusoidal_row};
use super::network::DncModel;
use super::params::Tensor;
use crate::error::{DncError, Result};
use crate::types::{CanonicalLabelSequence, EmbeddingSequence};

/// Source-attention keys and values for every decoder layer.
pub(crate) struct SourceMemory {
    k: Vec<Tensor>,
    v: Vec<Tensor>,
    n: usize,
}

/// Self-attention keys and values of the positions decoded so far.
#[derive(Clone)]
pub(crate) struct StepCache {
    k: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    len: usize,
}

/// How to search for the label sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decoding {
    Greedy,
    Beam(usize),
}

fn attend(q: &Array1<f64>, k: ArrayView2<'_, f64>, v: ArrayView2<'_, f64>, heads: usize) -> Array1<f64> {
    let d = q.len();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Array1::zeros(d);
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        let mut w = k.slice(s![.., cols.clone()]).dot(&q.slice(s![cols.clone()]));
        w *= scale;
        let m = w.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        w.mapv_inplace(|x| (x - m).exp());
        w /= w.sum();
        out.slice_mut(s![cols.clone()]).assign(&w.dot(&v.slice(s![.., cols])));
    }
    out
}

fn log_softmax(logits: ArrayView1<'_, f64>) -> Array1<f64> {
    let lse = log_sum_exp(logits.iter().copied());
    logits.mapv(|v| v - lse)
}

/// Index of the largest of the first `feasible` logits; ties go to the
/// lowest label.
fn feasible_argmax(logits: &Array1<f64>, feasible: usize) -> usize {
    let mut best = 0;
    for k in 1..feasible {
        if logits[k] > logits[best] {
            best = k;
        }
    }
    best
}

struct Hypothesis {
    labels: Vec<usize>,
    max_label: usize,
    score: f64,
    cache: StepCache,
    logits: Array1<f64>,
}

impl DncModel {
    pub(crate) fn source_memory(&self, h: &Tensor) -> SourceMemory {
        SourceMemory {
            k: self.params.decoder.iter().map(|b| h.dot(&b.src_attn.wk)).collect(),
            v: self.params.decoder.iter().map(|b| h.dot(&b.src_attn.wv)).collect(),
            n: h.nrows(),
        }
    }

    pub(crate) fn empty_cache(&self) -> StepCache {
        let layers = self.params.decoder.len();
        StepCache { k: vec![Vec::new(); layers], v: vec![Vec::new(); layers], len: 0 }
    }

    /// Feeds `token` at the next position and returns that position's logits.
    pub(crate) fn step(&self, mem: &SourceMemory, cache: &mut StepCache, token: usize) -> Result<Array1<f64>> {
        let pos = cache.len;
        if pos >= mem.n {
            return Err(DncError::InvalidArgument(format!("decoding past the last of {} positions", mem.n)));
        }
        let d = self.config.dim_model;
        let heads = self.config.heads;
        let mut z = self.params.label_embedding.row(token).to_owned();
        if self.config.positional_encoding {
            z += &sinusoidal_row(pos, d);
        }
        for (l, b) in self.params.decoder.iter().enumerate() {
            let s_in = layer_norm_row(&b.self_norm, &z);
            let q = s_in.dot(&b.self_attn.wq);
            cache.k[l].extend(s_in.dot(&b.self_attn.wk));
            cache.v[l].extend(s_in.dot(&b.self_attn.wv));
            let keys = ArrayView2::from_shape((pos + 1, d), &cache.k[l]).expect("cache rows have width D_m");
            let values = ArrayView2::from_shape((pos + 1, d), &cache.v[l]).expect("cache rows have width D_m");
            z += &attend(&q, keys, values, heads).dot(&b.self_attn.wo);

            let c_in = layer_norm_row(&b.src_norm, &z);
            let q = c_in.dot(&b.src_attn.wq);
            let (lo, hi) = if self.config.diagonal_local_attention {
                (pos.saturating_sub(1), (pos + 2).min(mem.n))
            } else {
                (0, mem.n)
            };
            let keys = mem.k[l].slice(s![lo..hi, ..]);
            let values = mem.v[l].slice(s![lo..hi, ..]);
            z += &attend(&q, keys, values, heads).dot(&b.src_attn.wo);

            let f_in = layer_norm_row(&b.ff_norm, &z);
            z += &feed_forward_row(&b.ff, &f_in);
        }
        cache.len += 1;
        let out = layer_norm_row(&self.params.decoder_norm, &z);
        Ok(out.dot(&self.params.output.weight) + self.params.output.bias.row(0))
    }

    /// Logits of every position when the decoder is fed `inputs` one token
    /// at a time.
    pub fn incremental_logits(&self, x: ArrayView2<'_, f64>, inputs: &[usize]) -> Result<Tensor> {
        let h = self.encoder_forward(x)?;
        let mem = self.source_memory(&h);
        let mut cache = self.empty_cache();
        let mut out = Tensor::zeros((inputs.len(), self.config.max_clusters));
        for (i, &t) in inputs.iter().enumerate() {
            out.row_mut(i).assign(&self.step(&mem, &mut cache, t)?);
        }
        Ok(out)
    }

    /// Greedy decoding under the first-appearance feasibility constraint.
    pub fn decode_greedy(&self, x: ArrayView2<'_, f64>) -> Result<CanonicalLabelSequence> {
        let h = self.encoder_forward(x)?;
        let mem = self.source_memory(&h);
        let mut cache = self.empty_cache();
        let k_max = self.config.max_clusters;
        let mut labels = Vec::with_capacity(mem.n);
        let mut max_label = 0;
        let mut token = 0;
        for _ in 0..mem.n {
            let logits = self.step(&mem, &mut cache, token)?;
            let label = feasible_argmax(&logits, (max_label + 1).min(k_max)) + 1;
            labels.push(label);
            max_label = max_label.max(label);
            token = label;
        }
        Ok(CanonicalLabelSequence::new_unchecked(labels))
    }

    /// Beam search; returns the best complete hypothesis and its total
    /// log-probability.
    pub fn decode_beam_scored(&self, x: ArrayView2<'_, f64>, width: usize) -> Result<(CanonicalLabelSequence, f64)> {
        if width == 0 {
            return Err(DncError::InvalidArgument("beam width must be at least 1".into()));
        }
        let h = self.encoder_forward(x)?;
        let mem = self.source_memory(&h);
        let k_max = self.config.max_clusters;
        let mut cache = self.empty_cache();
        let logits = self.step(&mem, &mut cache, 0)?;
        let mut beam = vec![Hypothesis { labels: Vec::new(), max_label: 0, score: 0.0, cache, logits }];
        for i in 0..mem.n {
            let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
            for (hi, hyp) in beam.iter().enumerate() {
                let logp = log_softmax(hyp.logits.view());
                for label in 1..=(hyp.max_label + 1).min(k_max) {
                    candidates.push((hyp.score + logp[label - 1], hi, label));
                }
            }
            candidates.sort_by(|a, b| b.0.total_cmp(&a.0));
            candidates.truncate(width);
            let mut next = Vec::with_capacity(candidates.len());
            for (score, hi, label) in candidates {
                let parent = &beam[hi];
                let mut labels = parent.labels.clone();
                labels.push(label);
                let mut cache = parent.cache.clone();
                let logits = if i + 1 < mem.n {
                    self.step(&mem, &mut cache, label)?
                } else {
                    Array1::zeros(0)
                };
                next.push(Hypothesis { labels, max_label: parent.max_label.max(label), score, cache, logits });
            }
            beam = next;
        }
        let best = beam.swap_remove(0);
        Ok((CanonicalLabelSequence::new_unchecked(best.labels), best.score))
    }

    pub fn decode_beam(&self, x: ArrayView2<'_, f64>, width: usize) -> Result<CanonicalLabelSequence> {
        Ok(self.decode_beam_scored(x, width)?.0)
    }

    /// Clusters unit-norm embeddings.
    pub fn cluster(&self, x: &EmbeddingSequence, decoding: Decoding) -> Result<CanonicalLabelSequence> {
        let input = Self::prepare_input(x);
        match decoding {
            Decoding::Greedy => self.decode_greedy(input.view()),
            Decoding::Beam(w) => self.decode_beam(input.view(), w),
        }
    }
}
