//! Teacher-forced forward and backward passes.

use ndarray::{Array1, Array2, ArrayView2};

use super::attention::{mha_backward, mha_forward, AttentionMask, MhaCache};
use super::config::ModelConfig;
use super::layers::{
    dropout_backward, feed_forward, feed_forward_backward, layer_norm, layer_norm_backward, linear, linear_backward,
    log_softmax_rows, sinusoidal, Dropout, FeedForwardCache, LayerNormCache,
};
use super::params::{ModelParams, ParamSet, Tensor};
use crate::augment::variance_factor;
use crate::error::{DncError, Result};
use crate::rng::DncRng;
use crate::types::EmbeddingSequence;

/// A configured DNC network.
#[derive(Debug, Clone, PartialEq)]
pub struct DncModel {
    pub config: ModelConfig,
    pub params: ModelParams,
}

struct EncoderBlockCache {
    ln1: LayerNormCache,
    attn: MhaCache,
    drop1: Option<Tensor>,
    ln2: LayerNormCache,
    ff: FeedForwardCache,
    drop2: Option<Tensor>,
}

pub(crate) struct EncoderCache {
    input: Tensor,
    drop_in: Option<Tensor>,
    blocks: Vec<EncoderBlockCache>,
    norm: LayerNormCache,
}

struct DecoderBlockCache {
    ln1: LayerNormCache,
    self_attn: MhaCache,
    drop1: Option<Tensor>,
    ln2: LayerNormCache,
    src_attn: MhaCache,
    drop2: Option<Tensor>,
    ln3: LayerNormCache,
    ff: FeedForwardCache,
    drop3: Option<Tensor>,
}

pub(crate) struct DecoderCache {
    inputs: Vec<usize>,
    drop_in: Option<Tensor>,
    blocks: Vec<DecoderBlockCache>,
    norm: LayerNormCache,
    normed: Tensor,
}

/// Adds the dropped-out sub-layer output to the residual stream.
fn residual(x: &mut Tensor, mut sub: Tensor, drop: &mut Dropout) -> Option<Tensor> {
    let mask = drop.apply(&mut sub);
    *x += &sub;
    mask
}

/// Decoder inputs for teacher forcing: the start token then `y_1..y_{N-1}`.
pub fn shift_right(labels: &[usize]) -> Vec<usize> {
    std::iter::once(0).chain(labels.iter().copied().take(labels.len().saturating_sub(1))).collect()
}

impl DncModel {
    pub fn new(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        params.check_shapes(&config)?;
        Ok(Self { config, params })
    }

    pub fn init(config: ModelConfig, rng: &mut DncRng) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(&config, rng);
        Ok(Self { config, params })
    }

    /// Scales unit-norm embeddings to the input convention of the network.
    pub fn prepare_input(x: &EmbeddingSequence) -> Tensor {
        x.data().to_owned() * variance_factor(x.dim())
    }

    fn check_input(&self, x: ArrayView2<'_, f64>) -> Result<()> {
        if x.nrows() == 0 {
            return Err(DncError::DegenerateInput("empty input sequence".into()));
        }
        if x.ncols() != self.config.input_dim {
            return Err(DncError::DimensionMismatch(format!(
                "input has dimension {}, model expects {}",
                x.ncols(),
                self.config.input_dim
            )));
        }
        Ok(())
    }

    fn check_labels(&self, n: usize, labels: &[usize]) -> Result<()> {
        if labels.len() != n {
            return Err(DncError::DimensionMismatch(format!("{} labels for {n} inputs", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l == 0 || l > self.config.max_clusters) {
            return Err(DncError::InvalidArgument(format!(
                "label {bad} outside 1..={}",
                self.config.max_clusters
            )));
        }
        Ok(())
    }

    pub(crate) fn source_mask(&self, rows: usize, cols: usize) -> AttentionMask {
        if self.config.diagonal_local_attention {
            AttentionMask::tri_diagonal(rows, cols)
        } else {
            AttentionMask::full(rows, cols)
        }
    }

    pub(crate) fn encode_with(&self, x: ArrayView2<'_, f64>, drop: &mut Dropout) -> Result<(Tensor, EncoderCache)> {
        self.check_input(x)?;
        let input = x.to_owned();
        let n = input.nrows();
        let mut z = linear(&self.params.input, &input);
        if self.config.positional_encoding {
            z += &sinusoidal(n, self.config.dim_model);
        }
        let drop_in = drop.apply(&mut z);
        let mask = AttentionMask::full(n, n);
        let mut blocks = Vec::with_capacity(self.params.encoder.len());
        for b in &self.params.encoder {
            let (a_in, ln1) = layer_norm(&b.attn_norm, &z);
            let (a, attn) = mha_forward(&b.self_attn, self.config.heads, &a_in, None, &mask, drop)?;
            let drop1 = residual(&mut z, a, drop);
            let (f_in, ln2) = layer_norm(&b.ff_norm, &z);
            let (f, ff) = feed_forward(&b.ff, &f_in, drop);
            let drop2 = residual(&mut z, f, drop);
            blocks.push(EncoderBlockCache { ln1, attn, drop1, ln2, ff, drop2 });
        }
        let (h, norm) = layer_norm(&self.params.encoder_norm, &z);
        Ok((h, EncoderCache { input, drop_in, blocks, norm }))
    }

    fn encode_backward(&self, g: &mut ModelParams, c: &EncoderCache, dh: &Tensor) {
        let mut dz = layer_norm_backward(&self.params.encoder_norm, &mut g.encoder_norm, &c.norm, dh);
        for ((b, gb), bc) in self.params.encoder.iter().zip(g.encoder.iter_mut()).zip(&c.blocks).rev() {
            let df = dropout_backward(&bc.drop2, dz.clone());
            let df_in = feed_forward_backward(&b.ff, &mut gb.ff, &bc.ff, &df);
            dz += &layer_norm_backward(&b.ff_norm, &mut gb.ff_norm, &bc.ln2, &df_in);
            let da = dropout_backward(&bc.drop1, dz.clone());
            let (da_in, _) = mha_backward(&b.self_attn, &mut gb.self_attn, self.config.heads, &bc.attn, &da);
            dz += &layer_norm_backward(&b.attn_norm, &mut gb.attn_norm, &bc.ln1, &da_in);
        }
        let dz = dropout_backward(&c.drop_in, dz);
        linear_backward(&self.params.input, &mut g.input, &c.input, &dz);
    }

    /// Runs the decoder on `inputs` (start token first) against encoder
    /// output `h`, returning one row of logits per input position.
    pub(crate) fn decode_with(&self, h: &Tensor, inputs: &[usize], drop: &mut Dropout) -> Result<(Tensor, DecoderCache)> {
        let l = inputs.len();
        if l == 0 || l > h.nrows() {
            return Err(DncError::InvalidArgument(format!(
                "decoder history of length {l} for {} encoder positions",
                h.nrows()
            )));
        }
        if let Some(&bad) = inputs.iter().find(|&&t| t > self.config.max_clusters) {
            return Err(DncError::InvalidArgument(format!("decoder input token {bad} exceeds K_max")));
        }
        let d = self.config.dim_model;
        let mut z = Array2::zeros((l, d));
        for (i, &t) in inputs.iter().enumerate() {
            z.row_mut(i).assign(&self.params.label_embedding.row(t));
        }
        if self.config.positional_encoding {
            z += &sinusoidal(l, d);
        }
        let drop_in = drop.apply(&mut z);
        let self_mask = AttentionMask::causal(l);
        let src_mask = self.source_mask(l, h.nrows());
        let mut blocks = Vec::with_capacity(self.params.decoder.len());
        for b in &self.params.decoder {
            let (s_in, ln1) = layer_norm(&b.self_norm, &z);
            let (s, self_attn) = mha_forward(&b.self_attn, self.config.heads, &s_in, None, &self_mask, drop)?;
            let drop1 = residual(&mut z, s, drop);
            let (c_in, ln2) = layer_norm(&b.src_norm, &z);
            let (c, src_attn) = mha_forward(&b.src_attn, self.config.heads, &c_in, Some(h), &src_mask, drop)?;
            let drop2 = residual(&mut z, c, drop);
            let (f_in, ln3) = layer_norm(&b.ff_norm, &z);
            let (f, ff) = feed_forward(&b.ff, &f_in, drop);
            let drop3 = residual(&mut z, f, drop);
            blocks.push(DecoderBlockCache { ln1, self_attn, drop1, ln2, src_attn, drop2, ln3, ff, drop3 });
        }
        let (normed, norm) = layer_norm(&self.params.decoder_norm, &z);
        let logits = linear(&self.params.output, &normed);
        Ok((logits, DecoderCache { inputs: inputs.to_vec(), drop_in, blocks, norm, normed }))
    }

    /// Returns dL/dH.
    fn decode_backward(&self, g: &mut ModelParams, c: &DecoderCache, dlogits: &Tensor) -> Tensor {
        let dnormed = linear_backward(&self.params.output, &mut g.output, &c.normed, dlogits);
        let mut dz = layer_norm_backward(&self.params.decoder_norm, &mut g.decoder_norm, &c.norm, &dnormed);
        let mut dh: Option<Tensor> = None;
        for ((b, gb), bc) in self.params.decoder.iter().zip(g.decoder.iter_mut()).zip(&c.blocks).rev() {
            let df = dropout_backward(&bc.drop3, dz.clone());
            let df_in = feed_forward_backward(&b.ff, &mut gb.ff, &bc.ff, &df);
            dz += &layer_norm_backward(&b.ff_norm, &mut gb.ff_norm, &bc.ln3, &df_in);
            let dc = dropout_backward(&bc.drop2, dz.clone());
            let (dc_in, dctx) = mha_backward(&b.src_attn, &mut gb.src_attn, self.config.heads, &bc.src_attn, &dc);
            let dctx = dctx.expect("source attention has a context gradient");
            match dh.as_mut() {
                Some(acc) => *acc += &dctx,
                None => dh = Some(dctx),
            }
            dz += &layer_norm_backward(&b.src_norm, &mut gb.src_norm, &bc.ln2, &dc_in);
            let ds = dropout_backward(&bc.drop1, dz.clone());
            let (ds_in, _) = mha_backward(&b.self_attn, &mut gb.self_attn, self.config.heads, &bc.self_attn, &ds);
            dz += &layer_norm_backward(&b.self_norm, &mut gb.self_norm, &bc.ln1, &ds_in);
        }
        let dz = dropout_backward(&c.drop_in, dz);
        for (i, &t) in c.inputs.iter().enumerate() {
            let mut row = g.label_embedding.row_mut(t);
            row += &dz.row(i);
        }
        dh.expect("decoder has at least one block")
    }

    /// Encoder output `H` (N×D_m) for scaled input `x`, without dropout.
    pub fn encoder_forward(&self, x: ArrayView2<'_, f64>) -> Result<Tensor> {
        Ok(self.encode_with(x, &mut Dropout::disabled())?.0)
    }

    /// Logits for position `i = history.len()` given `history = [0, y_1, .., y_{i-1}]`.
    pub fn decoder_forward(&self, history: &[usize], h: &Tensor) -> Result<Array1<f64>> {
        if history.first() != Some(&0) {
            return Err(DncError::InvalidArgument("decoder history must begin with the start token".into()));
        }
        let (logits, _) = self.decode_with(h, history, &mut Dropout::disabled())?;
        Ok(logits.row(logits.nrows() - 1).to_owned())
    }

    /// N×K_max teacher-forced logits; column `k` scores label `k + 1`.
    pub fn teacher_forced_logits(&self, x: ArrayView2<'_, f64>, labels: &[usize]) -> Result<Tensor> {
        self.check_input(x)?;
        self.check_labels(x.nrows(), labels)?;
        let h = self.encoder_forward(x)?;
        Ok(self.decode_with(&h, &shift_right(labels), &mut Dropout::disabled())?.0)
    }

    /// Total log-probability of `labels` under the model.
    pub fn sequence_log_prob(&self, x: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
        let logp = log_softmax_rows(&self.teacher_forced_logits(x, labels)?);
        Ok(labels.iter().enumerate().map(|(i, &y)| logp[[i, y - 1]]).sum())
    }

    /// Mean negative log-likelihood per label.
    pub fn nll_loss(&self, x: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
        Ok(-self.sequence_log_prob(x, labels)? / labels.len() as f64)
    }

    /// Adds `weight · d(Σ_i -log p(y_i))/dθ` to `grads` and returns the
    /// summed negative log-likelihood. Dropout is active when `dropout_rng`
    /// is given.
    pub fn accumulate_gradients(
        &self,
        x: ArrayView2<'_, f64>,
        labels: &[usize],
        weight: f64,
        dropout_rng: Option<DncRng>,
        grads: &mut ModelParams,
    ) -> Result<f64> {
        self.check_input(x)?;
        self.check_labels(x.nrows(), labels)?;
        let mut drop = Dropout { rate: self.config.dropout, rng: dropout_rng };
        let (h, enc) = self.encode_with(x, &mut drop)?;
        let (logits, dec) = self.decode_with(&h, &shift_right(labels), &mut drop)?;
        let logp = log_softmax_rows(&logits);
        let mut nll = 0.0;
        let mut dlogits = logp.mapv(f64::exp);
        for (i, &y) in labels.iter().enumerate() {
            nll -= logp[[i, y - 1]];
            dlogits[[i, y - 1]] -= 1.0;
        }
        dlogits *= weight;
        let dh = self.decode_backward(grads, &dec, &dlogits);
        self.encode_backward(grads, &enc, &dh);
        Ok(nll)
    }

    /// Mean loss and its exact gradient with dropout disabled.
    pub fn backward(&self, x: ArrayView2<'_, f64>, labels: &[usize]) -> Result<(f64, ModelParams)> {
        let mut grads = self.params.zeros_like();
        let n = labels.len() as f64;
        let nll = self.accumulate_gradients(x, labels, 1.0 / n, None, &mut grads)?;
        Ok((nll / n, grads))
    }

    /// Source-attention weights of every decoder layer and head under
    /// teacher forcing.
    pub fn source_attention_weights(&self, x: ArrayView2<'_, f64>, labels: &[usize]) -> Result<Vec<Vec<Tensor>>> {
        self.check_labels(x.nrows(), labels)?;
        let h = self.encoder_forward(x)?;
        let (_, dec) = self.decode_with(&h, &shift_right(labels), &mut Dropout::disabled())?;
        Ok(dec.blocks.into_iter().map(|b| b.src_attn.probs).collect())
    }

    /// Self-attention weights of every encoder and decoder layer.
    pub fn self_attention_weights(&self, x: ArrayView2<'_, f64>, labels: &[usize]) -> Result<Vec<Vec<Tensor>>> {
        self.check_labels(x.nrows(), labels)?;
        let (h, enc) = self.encode_with(x, &mut Dropout::disabled())?;
        let (_, dec) = self.decode_with(&h, &shift_right(labels), &mut Dropout::disabled())?;
        let mut out: Vec<Vec<Tensor>> = enc.blocks.into_iter().map(|b| b.attn.probs).collect();
        out.extend(dec.blocks.into_iter().map(|b| b.self_attn.probs));
        Ok(out)
    }
}
