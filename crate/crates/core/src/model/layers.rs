//! Dense building blocks with hand-written backward passes.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use super::params::{FeedForward, LayerNorm, Linear, Tensor};
use crate::rng::DncRng;

pub(crate) const LAYER_NORM_EPS: f64 = 1e-6;

pub(crate) fn linear(p: &Linear, x: &Tensor) -> Tensor {
    let mut y = x.dot(&p.weight);
    y += &p.bias;
    y
}

/// Accumulates parameter gradients into `g` and returns dL/dx.
pub(crate) fn linear_backward(p: &Linear, g: &mut Linear, x: &Tensor, dy: &Tensor) -> Tensor {
    general_mat_mul(1.0, &x.t(), dy, 1.0, &mut g.weight);
    g.bias += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    dy.dot(&p.weight.t())
}

pub(crate) struct LayerNormCache {
    xhat: Tensor,
    inv_std: Array1<f64>,
}

pub(crate) fn layer_norm(p: &LayerNorm, x: &Tensor) -> (Tensor, LayerNormCache) {
    let d = x.ncols() as f64;
    let mean = x.sum_axis(Axis(1)) / d;
    let mut xhat = x - &mean.view().insert_axis(Axis(1));
    let var = xhat.map_axis(Axis(1), |r| r.dot(&r) / d);
    let inv_std = var.mapv(|v| 1.0 / (v + LAYER_NORM_EPS).sqrt());
    xhat *= &inv_std.view().insert_axis(Axis(1));
    let mut y = &xhat * &p.gain;
    y += &p.bias;
    (y, LayerNormCache { xhat, inv_std })
}

pub(crate) fn layer_norm_backward(p: &LayerNorm, g: &mut LayerNorm, c: &LayerNormCache, dy: &Tensor) -> Tensor {
    g.gain += &(dy * &c.xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
    g.bias += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
    let dxhat = dy * &p.gain;
    let d = dy.ncols() as f64;
    let mean_dxhat = dxhat.sum_axis(Axis(1)) / d;
    let mean_dxhat_xhat = (&dxhat * &c.xhat).sum_axis(Axis(1)) / d;
    let mut dx = dxhat;
    dx -= &mean_dxhat.insert_axis(Axis(1));
    dx -= &(&c.xhat * &mean_dxhat_xhat.insert_axis(Axis(1)));
    dx *= &c.inv_std.view().insert_axis(Axis(1));
    dx
}

/// Single-row layer norm for incremental decoding.
pub(crate) fn layer_norm_row(p: &LayerNorm, x: &Array1<f64>) -> Array1<f64> {
    let d = x.len() as f64;
    let mean = x.sum() / d;
    let centred = x - mean;
    let var = centred.dot(&centred) / d;
    let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    let mut y = centred * inv_std * &p.gain.row(0);
    y += &p.bias.row(0);
    y
}

/// Inverted dropout. Inactive when `rng` is `None` or the rate is zero.
pub(crate) struct Dropout {
    pub rate: f64,
    pub rng: Option<DncRng>,
}

impl Dropout {
    pub fn disabled() -> Self {
        Self { rate: 0.0, rng: None }
    }

    pub fn active(&self) -> bool {
        self.rng.is_some() && self.rate > 0.0
    }

    /// Applies dropout in place and returns the scaled keep-mask.
    pub fn apply(&mut self, x: &mut Tensor) -> Option<Tensor> {
        if !self.active() {
            return None;
        }
        let keep = 1.0 - self.rate;
        let scale = 1.0 / keep;
        let rng = self.rng.as_mut().expect("active dropout has an rng");
        let mask = Array2::from_shape_simple_fn(x.raw_dim(), || if rng.random_bool(keep) { scale } else { 0.0 });
        *x *= &mask;
        Some(mask)
    }
}

pub(crate) fn dropout_backward(mask: &Option<Tensor>, dy: Tensor) -> Tensor {
    match mask {
        Some(m) => dy * m,
        None => dy,
    }
}

pub(crate) struct FeedForwardCache {
    input: Tensor,
    hidden: Tensor,
    drop: Option<Tensor>,
}

/// `relu(x W1 + b1) W2 + b2`, with dropout on the hidden activation.
pub(crate) fn feed_forward(p: &FeedForward, x: &Tensor, drop: &mut Dropout) -> (Tensor, FeedForwardCache) {
    let mut hidden = linear(&p.inner, x);
    hidden.mapv_inplace(|v| v.max(0.0));
    let mask = drop.apply(&mut hidden);
    let y = linear(&p.outer, &hidden);
    (y, FeedForwardCache { input: x.clone(), hidden, drop: mask })
}

pub(crate) fn feed_forward_backward(p: &FeedForward, g: &mut FeedForward, c: &FeedForwardCache, dy: &Tensor) -> Tensor {
    let dh = linear_backward(&p.outer, &mut g.outer, &c.hidden, dy);
    let mut dh = dropout_backward(&c.drop, dh);
    // The post-dropout activation is zero wherever relu or dropout zeroed it.
    ndarray::Zip::from(&mut dh).and(&c.hidden).for_each(|d, &h| {
        if h <= 0.0 {
            *d = 0.0;
        }
    });
    linear_backward(&p.inner, &mut g.inner, &c.input, &dh)
}

pub(crate) fn feed_forward_row(p: &FeedForward, x: &Array1<f64>) -> Array1<f64> {
    let mut h = x.dot(&p.inner.weight) + p.inner.bias.row(0);
    h.mapv_inplace(|v| v.max(0.0));
    h.dot(&p.outer.weight) + p.outer.bias.row(0)
}

/// Row-wise log-softmax.
pub(crate) fn log_softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let lse = log_sum_exp(row.iter().copied());
        row.mapv_inplace(|v| v - lse);
    }
    out
}

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Sinusoidal position encodings, N×D.
fn sinusoid(pos: usize, i: usize, d: usize) -> f64 {
    let rate = 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
    let a = pos as f64 / rate;
    if i % 2 == 0 {
        a.sin()
    } else {
        a.cos()
    }
}

pub(crate) fn sinusoidal(n: usize, d: usize) -> Tensor {
    Array2::from_shape_fn((n, d), |(pos, i)| sinusoid(pos, i, d))
}

pub(crate) fn sinusoidal_row(pos: usize, d: usize) -> Array1<f64> {
    Array1::from_shape_fn(d, |i| sinusoid(pos, i, d))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn layer_norm_rows_are_standardised() {
        let p = LayerNorm { gain: Array2::ones((1, 4)), bias: Array2::zeros((1, 4)) };
        let x = array![[1.0, 2.0, 3.0, 4.0], [-5.0, 0.0, 5.0, 10.0]];
        let (y, _) = layer_norm(&p, &x);
        for r in y.rows() {
            assert!(r.sum().abs() < 1e-12);
            assert!((r.dot(&r) / 4.0 - 1.0).abs() < 1e-5);
        }
        let row = layer_norm_row(&p, &x.row(1).to_owned());
        assert!((&row - &y.row(1)).iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn dropout_keeps_expectation() {
        let mut d = Dropout { rate: 0.25, rng: Some(crate::rng::stream(3, &[])) };
        let mut x = Array2::ones((200, 200));
        d.apply(&mut x);
        let mean = x.mean().unwrap();
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
        assert!(Dropout::disabled().apply(&mut x).is_none());
    }

    #[test]
    fn log_softmax_normalises() {
        let x = array![[1.0, 2.0, 3.0], [1000.0, 1000.0, -1000.0]];
        let l = log_softmax_rows(&x);
        for r in l.rows() {
            assert!((r.mapv(f64::exp).sum() - 1.0).abs() < 1e-12);
        }
    }
}
