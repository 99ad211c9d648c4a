use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use crate::error::{DncError, Result};

pub type Tensor = Array2<f64>;

/// A collection of named parameter tensors with a fixed traversal order.
pub trait ParamSet {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>);
    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>);

    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.collect("", &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        self.collect_mut("", &mut out);
        out
    }

    fn zeros_like(&self) -> Self
    where
        Self: Clone + Sized,
    {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl ParamSet for Tensor {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((prefix.to_string(), self));
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        out.push((prefix.to_string(), self));
    }
}

impl<T: ParamSet> ParamSet for Vec<T> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (i, t) in self.iter().enumerate() {
            t.collect(&join(prefix, &i.to_string()), out);
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        for (i, t) in self.iter_mut().enumerate() {
            t.collect_mut(&join(prefix, &i.to_string()), out);
        }
    }
}

macro_rules! param_set {
    ($ty:ident { $($field:ident),+ $(,)? }) => {
        impl ParamSet for $ty {
            fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
                $( self.$field.collect(&join(prefix, stringify!($field)), out); )+
            }

            fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
                $( self.$field.collect_mut(&join(prefix, stringify!($field)), out); )+
            }
        }
    };
}

/// Affine map `y = x W + b`; `weight` is in×out, `bias` is 1×out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}
param_set!(Linear { weight, bias });

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gain: Tensor,
    pub bias: Tensor,
}
param_set!(LayerNorm { gain, bias });

/// Multi-head attention projections. Head `h` owns columns
/// `h*D_h..(h+1)*D_h` of `wq`, `wk` and `wv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MhaParams {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
}
param_set!(MhaParams { wq, wk, wv, wo });

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}
param_set!(FeedForward { inner, outer });

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderBlock {
    pub attn_norm: LayerNorm,
    pub self_attn: MhaParams,
    pub ff_norm: LayerNorm,
    pub ff: FeedForward,
}
param_set!(EncoderBlock { attn_norm, self_attn, ff_norm, ff });

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderBlock {
    pub self_norm: LayerNorm,
    pub self_attn: MhaParams,
    pub src_norm: LayerNorm,
    pub src_attn: MhaParams,
    pub ff_norm: LayerNorm,
    pub ff: FeedForward,
}
param_set!(DecoderBlock { self_norm, self_attn, src_norm, src_attn, ff_norm, ff });

/// All weights of the DNC Transformer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub input: Linear,
    pub encoder: Vec<EncoderBlock>,
    pub encoder_norm: LayerNorm,
    /// `(K_max + 1) × D_m`; row 0 embeds the start token.
    pub label_embedding: Tensor,
    pub decoder: Vec<DecoderBlock>,
    pub decoder_norm: LayerNorm,
    /// `D_m → K_max`; output column `k` scores label `k + 1`.
    pub output: Linear,
}
param_set!(ModelParams { input, encoder, encoder_norm, label_embedding, decoder, decoder_norm, output });

fn xavier<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-a..a))
}

impl Linear {
    fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            weight: xavier(inputs, outputs, rng),
            bias: Array2::zeros((1, outputs)),
        }
    }
}

impl LayerNorm {
    fn init(dim: usize) -> Self {
        Self {
            gain: Array2::ones((1, dim)),
            bias: Array2::zeros((1, dim)),
        }
    }
}

impl MhaParams {
    fn init<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        Self {
            wq: xavier(dim, dim, rng),
            wk: xavier(dim, dim, rng),
            wv: xavier(dim, dim, rng),
            wo: xavier(dim, dim, rng),
        }
    }
}

impl FeedForward {
    fn init<R: Rng + ?Sized>(dim: usize, ff: usize, rng: &mut R) -> Self {
        Self {
            inner: Linear::init(dim, ff, rng),
            outer: Linear::init(ff, dim, rng),
        }
    }
}

impl ModelParams {
    /// Xavier-uniform weights, zero biases, unit norm gains, standard-normal
    /// label embeddings.
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let d = cfg.dim_model;
        let input = Linear::init(cfg.input_dim, d, rng);
        let encoder = (0..cfg.encoder_blocks)
            .map(|_| EncoderBlock {
                attn_norm: LayerNorm::init(d),
                self_attn: MhaParams::init(d, rng),
                ff_norm: LayerNorm::init(d),
                ff: FeedForward::init(d, cfg.ff_dim, rng),
            })
            .collect();
        let label_embedding =
            Array2::from_shape_simple_fn((cfg.label_vocab(), d), || rng.sample::<f64, _>(StandardNormal));
        let decoder = (0..cfg.decoder_blocks)
            .map(|_| DecoderBlock {
                self_norm: LayerNorm::init(d),
                self_attn: MhaParams::init(d, rng),
                src_norm: LayerNorm::init(d),
                src_attn: MhaParams::init(d, rng),
                ff_norm: LayerNorm::init(d),
                ff: FeedForward::init(d, cfg.ff_dim, rng),
            })
            .collect();
        Self {
            input,
            encoder,
            encoder_norm: LayerNorm::init(d),
            label_embedding,
            decoder,
            decoder_norm: LayerNorm::init(d),
            output: Linear::init(d, cfg.max_clusters, rng),
        }
    }

    /// Checks that every tensor has the shape `cfg` implies.
    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let mut expected = Self::init(cfg, &mut crate::rng::stream(0, &[]));
        let want: Vec<(String, (usize, usize))> =
            expected.tensors_mut().into_iter().map(|(n, t)| (n, t.dim())).collect();
        let have: Vec<(String, (usize, usize))> = self.tensors().into_iter().map(|(n, t)| (n, t.dim())).collect();
        if want != have {
            let diff = want
                .iter()
                .zip(&have)
                .find(|(a, b)| a != b)
                .map(|(a, b)| format!("expected {} {:?}, found {} {:?}", a.0, a.1, b.0, b.1))
                .unwrap_or_else(|| format!("{} tensors expected, {} found", want.len(), have.len()));
            return Err(DncError::DimensionMismatch(diff));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_and_shapes() {
        let cfg = ModelConfig::full();
        let p = ModelParams::init(&cfg, &mut crate::rng::stream(1, &[]));
        let names: Vec<String> = p.tensors().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names[0], "input.weight");
        assert!(names.contains(&"encoder.3.self_attn.wq".to_string()));
        assert!(names.contains(&"decoder.0.src_attn.wo".to_string()));
        assert_eq!(names.last().unwrap(), "output.bias");
        p.check_shapes(&cfg).unwrap();
        assert!(p.check_shapes(&ModelConfig::desk()).is_err());
        // 4+4 blocks at width 256 with a 1024-wide feed-forward layer.
        let n = p.num_parameters();
        assert!((7_000_000..7_500_000).contains(&n), "{n}");
        assert!(p.zeros_like().tensors().iter().all(|(_, t)| t.iter().all(|&x| x == 0.0)));
    }
}
