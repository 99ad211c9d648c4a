//! Scaled dot-product attention with explicit masks.

use ndarray::{s, Array2, ArrayView2, Axis};

use super::layers::{dropout_backward, Dropout};
use super::params::{MhaParams, Tensor};
use crate::error::{DncError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    Full,
    /// Query `i` may attend key `j` iff `j <= i`.
    Causal,
    /// Query `i` may attend key `j` iff `|i - j| <= 1`.
    TriDiagonal,
    Custom,
}

/// Which keys each query may attend to.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMask {
    kind: MaskKind,
    allowed: Array2<bool>,
}

impl AttentionMask {
    pub fn full(rows: usize, cols: usize) -> Self {
        Self { kind: MaskKind::Full, allowed: Array2::from_elem((rows, cols), true) }
    }

    pub fn causal(n: usize) -> Self {
        Self { kind: MaskKind::Causal, allowed: Array2::from_shape_fn((n, n), |(i, j)| j <= i) }
    }

    pub fn tri_diagonal(rows: usize, cols: usize) -> Self {
        Self {
            kind: MaskKind::TriDiagonal,
            allowed: Array2::from_shape_fn((rows, cols), |(i, j)| i.abs_diff(j) <= 1),
        }
    }

    pub fn from_matrix(allowed: Array2<bool>) -> Self {
        Self { kind: MaskKind::Custom, allowed }
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn matrix(&self) -> ArrayView2<'_, bool> {
        self.allowed.view()
    }

    pub fn allowed(&self, i: usize, j: usize) -> bool {
        self.allowed[[i, j]]
    }

    fn check(&self, rows: usize, cols: usize) -> Result<()> {
        if self.allowed.dim() != (rows, cols) {
            return Err(DncError::DimensionMismatch(format!(
                "mask is {:?}, attention is {rows}×{cols}",
                self.allowed.dim()
            )));
        }
        Ok(())
    }
}

/// Softmax over the allowed entries of each row; banned entries become 0.
pub(crate) fn masked_softmax(logits: &mut Tensor, mask: &AttentionMask) -> Result<()> {
    for (i, (mut row, allowed)) in logits.rows_mut().into_iter().zip(mask.allowed.rows()).enumerate() {
        let m = row
            .iter()
            .zip(allowed)
            .filter(|(_, &a)| a)
            .map(|(&v, _)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        if m == f64::NEG_INFINITY {
            return Err(DncError::FullyMaskedRow { row: i });
        }
        let mut sum = 0.0;
        for (v, &a) in row.iter_mut().zip(allowed) {
            *v = if a { (*v - m).exp() } else { 0.0 };
            sum += *v;
        }
        row /= sum;
    }
    Ok(())
}

/// Projections of a single attention head; each is D×D_h.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
}

/// Attention weights `softmax(QK^T / sqrt(D_h))` with banned entries at 0.
pub fn attention_weights(
    queries: ArrayView2<'_, f64>,
    keys_values: ArrayView2<'_, f64>,
    head: &HeadParams,
    mask: &AttentionMask,
) -> Result<Tensor> {
    if queries.ncols() != head.wq.nrows() || keys_values.ncols() != head.wk.nrows() {
        return Err(DncError::DimensionMismatch("attention input width differs from projections".into()));
    }
    mask.check(queries.nrows(), keys_values.nrows())?;
    let q = queries.dot(&head.wq);
    let k = keys_values.dot(&head.wk);
    let mut logits = q.dot(&k.t()) / (head.wq.ncols() as f64).sqrt();
    masked_softmax(&mut logits, mask)?;
    Ok(logits)
}

/// Single-head scaled dot-product attention.
pub fn attention(
    queries: ArrayView2<'_, f64>,
    keys_values: ArrayView2<'_, f64>,
    head: &HeadParams,
    mask: &AttentionMask,
) -> Result<Tensor> {
    let w = attention_weights(queries, keys_values, head, mask)?;
    Ok(w.dot(&keys_values.dot(&head.wv)))
}

/// Multi-head attention without dropout. `context` equal to `input` gives
/// self-attention.
pub fn mha(
    input: ArrayView2<'_, f64>,
    context: ArrayView2<'_, f64>,
    params: &MhaParams,
    heads: usize,
    mask: &AttentionMask,
) -> Result<Tensor> {
    let (out, _) = mha_forward(
        params,
        heads,
        &input.to_owned(),
        Some(&context.to_owned()),
        mask,
        &mut Dropout::disabled(),
    )?;
    Ok(out)
}

impl MhaParams {
    /// The projections of head `h`.
    pub fn head(&self, h: usize, heads: usize) -> HeadParams {
        let dh = self.wq.ncols() / heads;
        let cols = s![.., h * dh..(h + 1) * dh];
        HeadParams {
            wq: self.wq.slice(cols).to_owned(),
            wk: self.wk.slice(cols).to_owned(),
            wv: self.wv.slice(cols).to_owned(),
        }
    }
}

pub(crate) struct MhaCache {
    xq: Tensor,
    /// Context input for source attention; `None` for self-attention.
    xc: Option<Tensor>,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    /// Per-head attention weights before dropout.
    pub probs: Vec<Tensor>,
    drops: Vec<Option<Tensor>>,
    concat: Tensor,
}

pub(crate) fn mha_forward(
    p: &MhaParams,
    heads: usize,
    xq: &Tensor,
    xc: Option<&Tensor>,
    mask: &AttentionMask,
    drop: &mut Dropout,
) -> Result<(Tensor, MhaCache)> {
    let ctx = xc.unwrap_or(xq);
    let d = p.wq.ncols();
    if xq.ncols() != p.wq.nrows() || ctx.ncols() != p.wk.nrows() {
        return Err(DncError::DimensionMismatch(format!(
            "attention inputs have widths {} and {}, projections expect {}",
            xq.ncols(),
            ctx.ncols(),
            p.wq.nrows()
        )));
    }
    mask.check(xq.nrows(), ctx.nrows())?;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let q = xq.dot(&p.wq);
    let k = ctx.dot(&p.wk);
    let v = ctx.dot(&p.wv);
    let mut concat = Array2::zeros((xq.nrows(), d));
    let mut probs = Vec::with_capacity(heads);
    let mut drops = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut w = q.slice(cols).dot(&k.slice(cols).t());
        w *= scale;
        masked_softmax(&mut w, mask)?;
        let mut a = w.clone();
        let m = drop.apply(&mut a);
        concat.slice_mut(cols).assign(&a.dot(&v.slice(cols)));
        probs.push(w);
        drops.push(m);
    }
    let out = concat.dot(&p.wo);
    let cache = MhaCache {
        xq: xq.clone(),
        xc: xc.cloned(),
        q,
        k,
        v,
        probs,
        drops,
        concat,
    };
    Ok((out, cache))
}

/// Returns dL/d(query input) and, for source attention, dL/d(context).
/// For self-attention both paths are summed into the first value.
pub(crate) fn mha_backward(
    p: &MhaParams,
    g: &mut MhaParams,
    heads: usize,
    c: &MhaCache,
    dy: &Tensor,
) -> (Tensor, Option<Tensor>) {
    use ndarray::linalg::general_mat_mul;
    let d = p.wq.ncols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    general_mat_mul(1.0, &c.concat.t(), dy, 1.0, &mut g.wo);
    let dconcat = dy.dot(&p.wo.t());
    let mut dq = Array2::zeros(c.q.raw_dim());
    let mut dk = Array2::zeros(c.k.raw_dim());
    let mut dv = Array2::zeros(c.v.raw_dim());
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let dc = dconcat.slice(cols);
        let w = &c.probs[h];
        let a = match &c.drops[h] {
            Some(m) => w * m,
            None => w.clone(),
        };
        dv.slice_mut(cols).assign(&a.t().dot(&dc));
        let da = dc.dot(&c.v.slice(cols).t());
        let dw = dropout_backward(&c.drops[h], da);
        let row_dot = (&dw * w).sum_axis(Axis(1)).insert_axis(Axis(1));
        let mut ds = (&dw - &row_dot) * w;
        ds *= scale;
        dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
        dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
    }
    let ctx = c.xc.as_ref().unwrap_or(&c.xq);
    general_mat_mul(1.0, &c.xq.t(), &dq, 1.0, &mut g.wq);
    general_mat_mul(1.0, &ctx.t(), &dk, 1.0, &mut g.wk);
    general_mat_mul(1.0, &ctx.t(), &dv, 1.0, &mut g.wv);
    let mut dxq = dq.dot(&p.wq.t());
    let mut dctx = dk.dot(&p.wk.t());
    general_mat_mul(1.0, &dv, &p.wv.t(), 1.0, &mut dctx);
    if c.xc.is_some() {
        (dxq, Some(dctx))
    } else {
        dxq += &dctx;
        (dxq, None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
        Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
    }

    /// Evaluates every sum and exponential with explicit loops.
    fn oracle_attention(x: &Tensor, c: &Tensor, head: &HeadParams, mask: &AttentionMask) -> Tensor {
        let (l, lc) = (x.nrows(), c.nrows());
        let (din, dh) = head.wq.dim();
        let proj = |m: &Tensor, w: &Tensor, r: usize, col: usize| (0..din).map(|t| m[[r, t]] * w[[t, col]]).sum::<f64>();
        let mut out = Array2::zeros((l, dh));
        for i in 0..l {
            let mut logits = vec![f64::NEG_INFINITY; lc];
            for j in 0..lc {
                if mask.allowed(i, j) {
                    let mut dot = 0.0;
                    for col in 0..dh {
                        dot += proj(x, &head.wq, i, col) * proj(c, &head.wk, j, col);
                    }
                    logits[j] = dot / (dh as f64).sqrt();
                }
            }
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|v| (v - m).exp()).sum();
            for j in 0..lc {
                let w = (logits[j] - m).exp() / z;
                for col in 0..dh {
                    out[[i, col]] += w * proj(c, &head.wv, j, col);
                }
            }
        }
        out
    }

    #[test]
    fn trivial_cases() {
        let id = HeadParams { wq: Array2::eye(2), wk: Array2::eye(2), wv: Array2::eye(2) };
        let v = array![[0.3, -2.0]];
        let out = attention(v.view(), v.view(), &id, &AttentionMask::full(1, 1)).unwrap();
        assert_eq!(out, v);
        // Zero query: equal logits over two keys.
        let q = array![[0.0, 0.0]];
        let kv = array![[0.0, 1.0], [4.0, 1.0]];
        let out = attention(q.view(), kv.view(), &id, &AttentionMask::full(1, 2)).unwrap();
        assert!((out[[0, 0]] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn matches_term_by_term_oracle() {
        let mut rng = crate::rng::stream(11, &[]);
        for mask in [AttentionMask::full(3, 3), AttentionMask::causal(3), AttentionMask::tri_diagonal(3, 3)] {
            let x = random(3, 3, &mut rng);
            let c = random(3, 3, &mut rng);
            let head = HeadParams { wq: random(3, 3, &mut rng), wk: random(3, 3, &mut rng), wv: random(3, 3, &mut rng) };
            let got = attention(x.view(), c.view(), &head, &mask).unwrap();
            let want = oracle_attention(&x, &c, &head, &mask);
            assert!(crate::linalg::max_abs_diff(got.view(), want.view()) < 1e-10);
        }
    }

    #[test]
    fn banned_entries_get_exactly_zero_weight() {
        let mut rng = crate::rng::stream(12, &[]);
        let x = random(7, 4, &mut rng);
        let head = HeadParams { wq: random(4, 2, &mut rng), wk: random(4, 2, &mut rng), wv: random(4, 2, &mut rng) };
        let mask = AttentionMask::tri_diagonal(7, 7);
        let w = attention_weights(x.view(), x.view(), &head, &mask).unwrap();
        for ((i, j), &v) in w.indexed_iter() {
            if i.abs_diff(j) > 1 {
                assert_eq!(v, 0.0);
            }
        }
        for r in w.rows() {
            assert!((r.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fully_masked_row_is_an_error() {
        let x = Array2::ones((2, 2));
        let head = HeadParams { wq: Array2::eye(2), wk: Array2::eye(2), wv: Array2::eye(2) };
        let mask = AttentionMask::from_matrix(array![[true, false], [false, false]]);
        assert!(matches!(
            attention(x.view(), x.view(), &head, &mask),
            Err(DncError::FullyMaskedRow { row: 1 })
        ));
        assert!(attention(x.view(), x.view(), &head, &AttentionMask::full(3, 2)).is_err());
    }

    #[test]
    fn mha_matches_reference_loop_over_heads() {
        let mut rng = crate::rng::stream(13, &[]);
        let p = MhaParams { wq: random(6, 6, &mut rng), wk: random(6, 6, &mut rng), wv: random(6, 6, &mut rng), wo: random(6, 6, &mut rng) };
        let x = random(5, 6, &mut rng);
        let c = random(4, 6, &mut rng);
        let mask = AttentionMask::tri_diagonal(5, 4);
        let got = mha(x.view(), c.view(), &p, 3, &mask).unwrap();
        let mut concat = Array2::zeros((5, 6));
        for h in 0..3 {
            let o = oracle_attention(&x, &c, &p.head(h, 3), &mask);
            concat.slice_mut(s![.., h * 2..h * 2 + 2]).assign(&o);
        }
        let want = concat.dot(&p.wo);
        assert!(crate::linalg::max_abs_diff(got.view(), want.view()) < 1e-10);
    }

    #[test]
    fn mha_single_head_and_duplicated_heads() {
        let mut rng = crate::rng::stream(14, &[]);
        let w = random(4, 4, &mut rng);
        let p = MhaParams { wq: w.clone(), wk: random(4, 4, &mut rng), wv: random(4, 4, &mut rng), wo: random(4, 4, &mut rng) };
        let x = random(3, 4, &mut rng);
        let mask = AttentionMask::full(3, 3);
        let one = mha(x.view(), x.view(), &p, 1, &mask).unwrap();
        let direct = attention(x.view(), x.view(), &p.head(0, 1), &mask).unwrap().dot(&p.wo);
        assert!(crate::linalg::max_abs_diff(one.view(), direct.view()) < 1e-12);

        let half = |m: &Tensor| {
            let a = m.slice(s![.., ..2]).to_owned();
            ndarray::concatenate![Axis(1), a, a]
        };
        let dup = MhaParams { wq: half(&p.wq), wk: half(&p.wk), wv: half(&p.wv), wo: Array2::eye(4) };
        let out = mha(x.view(), x.view(), &dup, 2, &mask).unwrap();
        assert!(crate::linalg::max_abs_diff(out.slice(s![.., ..2]), out.slice(s![.., 2..])) == 0.0);
    }
}
