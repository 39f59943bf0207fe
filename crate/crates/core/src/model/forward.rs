//! Pre-norm causal transformer: forward pass, cached trace, reverse-mode
//! gradients, and single-token incremental decoding.
//!
//! All matrices are row-major and applied as `y = x · W`. Every row-wise
//! kernel (layer norm, projections, attention for one query) is shared by the
//! full and incremental paths, so both produce bit-identical logits.

use super::params::{LayerOffsets, ModelParams, Offsets, Scalar};
use super::ModelError;

const LN_EPS: f64 = 1e-5;

/// `out = x · w` for a single row; `w` is `inner × cols`.
#[inline]
fn row_matmul<T: Scalar>(x: &[T], w: &[T], cols: usize, out: &mut [T]) {
    out.iter_mut().for_each(|o| *o = T::zero());
    for (k, &xk) in x.iter().enumerate() {
        let w_row = &w[k * cols..(k + 1) * cols];
        for (o, &wv) in out.iter_mut().zip(w_row) {
            *o = *o + xk * wv;
        }
    }
}

fn matmul<T: Scalar>(x: &[T], w: &[T], rows: usize, inner: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        row_matmul(&x[r * inner..(r + 1) * inner], w, cols, &mut out[r * cols..(r + 1) * cols]);
    }
    out
}

/// `dx += dy · wᵀ`; `w` is `inner × cols`, `dy` is `rows × cols`.
fn matmul_wt_acc<T: Scalar>(dy: &[T], w: &[T], rows: usize, inner: usize, cols: usize, dx: &mut [T]) {
    for r in 0..rows {
        let dy_row = &dy[r * cols..(r + 1) * cols];
        for k in 0..inner {
            let w_row = &w[k * cols..(k + 1) * cols];
            let s: T = dy_row.iter().zip(w_row).map(|(&a, &b)| a * b).sum();
            dx[r * inner + k] = dx[r * inner + k] + s;
        }
    }
}

/// `dw += xᵀ · dy`; `x` is `rows × inner`, `dy` is `rows × cols`.
fn xt_dy_acc<T: Scalar>(x: &[T], dy: &[T], rows: usize, inner: usize, cols: usize, dw: &mut [T]) {
    for r in 0..rows {
        let dy_row = &dy[r * cols..(r + 1) * cols];
        for k in 0..inner {
            let xk = x[r * inner + k];
            if xk == T::zero() {
                continue;
            }
            let dw_row = &mut dw[k * cols..(k + 1) * cols];
            for (g, &d) in dw_row.iter_mut().zip(dy_row) {
                *g = *g + xk * d;
            }
        }
    }
}

/// Layer norm of one row; returns `(xhat, rstd)` alongside writing `out`.
#[inline]
fn layer_norm_row<T: Scalar>(x: &[T], gain: &[T], bias: &[T], out: &mut [T], xhat: &mut [T]) -> T {
    let n = T::of_f64(x.len() as f64);
    let mean = x.iter().copied().sum::<T>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let rstd = T::one() / (var + T::of_f64(LN_EPS)).sqrt();
    for i in 0..x.len() {
        xhat[i] = (x[i] - mean) * rstd;
        out[i] = gain[i] * xhat[i] + bias[i];
    }
    rstd
}

#[inline]
fn gelu<T: Scalar>(u: T) -> T {
    let c = T::of_f64((2.0 / std::f64::consts::PI).sqrt());
    let a = T::of_f64(0.044715);
    let half = T::of_f64(0.5);
    half * u * (T::one() + (c * (u + a * u * u * u)).tanh())
}

#[inline]
fn gelu_grad<T: Scalar>(u: T) -> T {
    let c = T::of_f64((2.0 / std::f64::consts::PI).sqrt());
    let a = T::of_f64(0.044715);
    let half = T::of_f64(0.5);
    let th = (c * (u + a * u * u * u)).tanh();
    half * (T::one() + th) + half * u * (T::one() - th * th) * c * (T::one() + T::of_f64(3.0) * a * u * u)
}

/// Causal attention for query row `t` of one head over keys/values `0..=t`.
/// `probs` receives the attention weights (length `t + 1`).
#[allow(clippy::too_many_arguments)]
#[inline]
fn attend_row<T: Scalar>(
    q: &[T],
    keys: &[T],
    values: &[T],
    t: usize,
    d: usize,
    head: usize,
    hd: usize,
    probs: &mut [T],
    out: &mut [T],
) {
    let scale = T::one() / T::of_f64(hd as f64).sqrt();
    let qh = &q[head * hd..(head + 1) * hd];
    let mut max = T::neg_infinity();
    for s in 0..=t {
        let kh = &keys[s * d + head * hd..s * d + (head + 1) * hd];
        let score = qh.iter().zip(kh).map(|(&a, &b)| a * b).sum::<T>() * scale;
        probs[s] = score;
        if score > max {
            max = score;
        }
    }
    let mut total = T::zero();
    for p in probs[..=t].iter_mut() {
        *p = (*p - max).exp();
        total = total + *p;
    }
    for p in probs[..=t].iter_mut() {
        *p = *p / total;
    }
    let oh = &mut out[head * hd..(head + 1) * hd];
    oh.iter_mut().for_each(|o| *o = T::zero());
    for s in 0..=t {
        let vh = &values[s * d + head * hd..s * d + (head + 1) * hd];
        let p = probs[s];
        for (o, &v) in oh.iter_mut().zip(vh) {
            *o = *o + p * v;
        }
    }
}

#[derive(Debug, Clone)]
struct LayerTrace<T> {
    x_in: Vec<T>,
    h1: Vec<T>,
    xhat1: Vec<T>,
    rstd1: Vec<T>,
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// `[head][t][s]`, row `t` filled for `s <= t`.
    probs: Vec<T>,
    attn: Vec<T>,
    x_mid: Vec<T>,
    h2: Vec<T>,
    xhat2: Vec<T>,
    rstd2: Vec<T>,
    pre_act: Vec<T>,
    act: Vec<T>,
}

/// Activations cached by [`forward_trace`], sufficient for exact gradients.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    tokens: Vec<u32>,
    layers: Vec<LayerTrace<T>>,
    hf: Vec<T>,
    xhatf: Vec<T>,
    rstdf: Vec<T>,
    pub logits: Vec<T>,
}

impl<T> ForwardTrace<T> {
    pub fn seq_len(&self) -> usize {
        self.tokens.len()
    }
}

fn check_tokens<T: Scalar>(params: &ModelParams<T>, tokens: &[u32]) -> Result<(), ModelError> {
    let c = &params.config;
    if tokens.is_empty() {
        return Err(ModelError::EmptySequence);
    }
    if tokens.len() > c.max_seq_len {
        return Err(ModelError::SequenceTooLong {
            len: tokens.len(),
            max: c.max_seq_len,
        });
    }
    if let Some(&id) = tokens.iter().find(|&&id| id as usize >= c.vocab_size) {
        return Err(ModelError::TokenOutOfRange {
            id,
            vocab: c.vocab_size,
        });
    }
    Ok(())
}

fn layer_norm_rows<T: Scalar>(x: &[T], gain: &[T], bias: &[T], rows: usize, d: usize) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut out = vec![T::zero(); rows * d];
    let mut xhat = vec![T::zero(); rows * d];
    let mut rstd = vec![T::zero(); rows];
    for r in 0..rows {
        rstd[r] = layer_norm_row(
            &x[r * d..(r + 1) * d],
            gain,
            bias,
            &mut out[r * d..(r + 1) * d],
            &mut xhat[r * d..(r + 1) * d],
        );
    }
    (out, xhat, rstd)
}

/// Forward pass caching every activation. Logits are `seq_len × vocab`.
pub fn forward_trace<T: Scalar>(params: &ModelParams<T>, tokens: &[u32]) -> Result<ForwardTrace<T>, ModelError> {
    check_tokens(params, tokens)?;
    let c = &params.config;
    let (n, d, f, v, h, hd) = (tokens.len(), c.d_model, c.d_ff, c.vocab_size, c.n_heads, c.head_dim());
    let w = &params.data;
    let off = Offsets::new(c);

    let mut x = vec![T::zero(); n * d];
    for (t, &tok) in tokens.iter().enumerate() {
        let te = &w[off.tok_emb + tok as usize * d..off.tok_emb + (tok as usize + 1) * d];
        let pe = &w[off.pos_emb + t * d..off.pos_emb + (t + 1) * d];
        for i in 0..d {
            x[t * d + i] = te[i] + pe[i];
        }
    }

    let mut layers = Vec::with_capacity(c.n_layers);
    for lo in &off.layers {
        let x_in = x.clone();
        let (h1, xhat1, rstd1) = layer_norm_rows(&x, &w[lo.attn_gain..lo.attn_gain + d], &w[lo.attn_bias..lo.attn_bias + d], n, d);
        let q = matmul(&h1, &w[lo.wq..lo.wq + d * d], n, d, d);
        let k = matmul(&h1, &w[lo.wk..lo.wk + d * d], n, d, d);
        let vv = matmul(&h1, &w[lo.wv..lo.wv + d * d], n, d, d);
        let mut probs = vec![T::zero(); h * n * n];
        let mut attn = vec![T::zero(); n * d];
        for t in 0..n {
            for head in 0..h {
                let p = &mut probs[(head * n + t) * n..(head * n + t + 1) * n];
                attend_row(&q[t * d..(t + 1) * d], &k, &vv, t, d, head, hd, p, &mut attn[t * d..(t + 1) * d]);
            }
        }
        let proj = matmul(&attn, &w[lo.wo..lo.wo + d * d], n, d, d);
        for i in 0..n * d {
            x[i] = x[i] + proj[i];
        }
        let x_mid = x.clone();
        let (h2, xhat2, rstd2) = layer_norm_rows(&x, &w[lo.mlp_gain..lo.mlp_gain + d], &w[lo.mlp_bias..lo.mlp_bias + d], n, d);
        let pre_act = matmul(&h2, &w[lo.w_in..lo.w_in + d * f], n, d, f);
        let act: Vec<T> = pre_act.iter().map(|&u| gelu(u)).collect();
        let mlp = matmul(&act, &w[lo.w_out..lo.w_out + f * d], n, f, d);
        for i in 0..n * d {
            x[i] = x[i] + mlp[i];
        }
        layers.push(LayerTrace {
            x_in,
            h1,
            xhat1,
            rstd1,
            q,
            k,
            v: vv,
            probs,
            attn,
            x_mid,
            h2,
            xhat2,
            rstd2,
            pre_act,
            act,
        });
    }
    let (hf, xhatf, rstdf) = layer_norm_rows(&x, &w[off.final_gain..off.final_gain + d], &w[off.final_bias..off.final_bias + d], n, d);
    let logits = matmul(&hf, &w[off.head..off.head + d * v], n, d, v);
    Ok(ForwardTrace {
        tokens: tokens.to_vec(),
        layers,
        hf,
        xhatf,
        rstdf,
        logits,
    })
}

/// Logits (`seq_len × vocab`, row-major) for a token sequence.
pub fn forward<T: Scalar>(params: &ModelParams<T>, tokens: &[u32]) -> Result<Vec<T>, ModelError> {
    Ok(forward_trace(params, tokens)?.logits)
}

/// Layer-norm backward for `rows` rows; accumulates gain/bias gradients and
/// returns the input gradient.
#[allow(clippy::too_many_arguments)]
fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    xhat: &[T],
    rstd: &[T],
    gain: &[T],
    rows: usize,
    d: usize,
    dgain: &mut [T],
    dbias: &mut [T],
) -> Vec<T> {
    let mut dx = vec![T::zero(); rows * d];
    let nf = T::of_f64(d as f64);
    let mut dxhat = vec![T::zero(); d];
    for r in 0..rows {
        let dyr = &dy[r * d..(r + 1) * d];
        let xr = &xhat[r * d..(r + 1) * d];
        let mut mean_dxhat = T::zero();
        let mut mean_dxhat_x = T::zero();
        for i in 0..d {
            dgain[i] = dgain[i] + dyr[i] * xr[i];
            dbias[i] = dbias[i] + dyr[i];
            dxhat[i] = dyr[i] * gain[i];
            mean_dxhat = mean_dxhat + dxhat[i];
            mean_dxhat_x = mean_dxhat_x + dxhat[i] * xr[i];
        }
        mean_dxhat = mean_dxhat / nf;
        mean_dxhat_x = mean_dxhat_x / nf;
        for i in 0..d {
            dx[r * d + i] = rstd[r] * (dxhat[i] - mean_dxhat - xr[i] * mean_dxhat_x);
        }
    }
    dx
}

/// Reverse-mode pass: accumulates `∂L/∂θ` into `grads` given `∂L/∂logits`.
pub fn backward<T: Scalar>(params: &ModelParams<T>, trace: &ForwardTrace<T>, dlogits: &[T], grads: &mut [T]) {
    let c = &params.config;
    let (n, d, f, v, h, hd) = (trace.seq_len(), c.d_model, c.d_ff, c.vocab_size, c.n_heads, c.head_dim());
    assert_eq!(dlogits.len(), n * v, "dlogits shape");
    assert_eq!(grads.len(), params.data.len(), "gradient buffer shape");
    let w = &params.data;
    let off = Offsets::new(c);

    xt_dy_acc(&trace.hf, dlogits, n, d, v, &mut grads[off.head..off.head + d * v]);
    let mut dhf = vec![T::zero(); n * d];
    matmul_wt_acc(dlogits, &w[off.head..off.head + d * v], n, d, v, &mut dhf);
    let (dg, db) = split_pair(grads, off.final_gain, off.final_bias, d);
    let mut dx = layer_norm_backward(&dhf, &trace.xhatf, &trace.rstdf, &w[off.final_gain..off.final_gain + d], n, d, dg, db);

    for (lo, lt) in off.layers.iter().zip(&trace.layers).rev() {
        layer_backward(w, lo, lt, &mut dx, grads, n, d, f, h, hd);
    }

    for (t, &tok) in trace.tokens.iter().enumerate() {
        let te = off.tok_emb + tok as usize * d;
        let pe = off.pos_emb + t * d;
        for i in 0..d {
            grads[te + i] = grads[te + i] + dx[t * d + i];
            grads[pe + i] = grads[pe + i] + dx[t * d + i];
        }
    }
}

/// Disjoint mutable views of two equally sized tensors, `a` before `b`.
fn split_pair<T>(grads: &mut [T], a: usize, b: usize, len: usize) -> (&mut [T], &mut [T]) {
    debug_assert!(a + len <= b);
    let (left, right) = grads.split_at_mut(b);
    (&mut left[a..a + len], &mut right[..len])
}

#[allow(clippy::too_many_arguments)]
fn layer_backward<T: Scalar>(
    w: &[T],
    lo: &LayerOffsets,
    lt: &LayerTrace<T>,
    dx: &mut Vec<T>,
    grads: &mut [T],
    n: usize,
    d: usize,
    f: usize,
    h: usize,
    hd: usize,
) {
    // MLP: x_out = x_mid + gelu(h2 · W_in) · W_out
    xt_dy_acc(&lt.act, dx, n, f, d, &mut grads[lo.w_out..lo.w_out + f * d]);
    let mut dact = vec![T::zero(); n * f];
    matmul_wt_acc(dx, &w[lo.w_out..lo.w_out + f * d], n, f, d, &mut dact);
    let dpre: Vec<T> = dact.iter().zip(&lt.pre_act).map(|(&g, &u)| g * gelu_grad(u)).collect();
    xt_dy_acc(&lt.h2, &dpre, n, d, f, &mut grads[lo.w_in..lo.w_in + d * f]);
    let mut dh2 = vec![T::zero(); n * d];
    matmul_wt_acc(&dpre, &w[lo.w_in..lo.w_in + d * f], n, d, f, &mut dh2);
    let (dg, db) = split_pair(grads, lo.mlp_gain, lo.mlp_bias, d);
    let dnorm2 = layer_norm_backward(&dh2, &lt.xhat2, &lt.rstd2, &w[lo.mlp_gain..lo.mlp_gain + d], n, d, dg, db);
    for i in 0..n * d {
        dx[i] = dx[i] + dnorm2[i];
    }

    // Attention: x_mid = x_in + attn · W_o
    xt_dy_acc(&lt.attn, dx, n, d, d, &mut grads[lo.wo..lo.wo + d * d]);
    let mut dattn = vec![T::zero(); n * d];
    matmul_wt_acc(dx, &w[lo.wo..lo.wo + d * d], n, d, d, &mut dattn);

    let scale = T::one() / T::of_f64(hd as f64).sqrt();
    let mut dq = vec![T::zero(); n * d];
    let mut dk = vec![T::zero(); n * d];
    let mut dv = vec![T::zero(); n * d];
    let mut dp = vec![T::zero(); n];
    for head in 0..h {
        let cols = head * hd..(head + 1) * hd;
        for t in 0..n {
            let p = &lt.probs[(head * n + t) * n..(head * n + t) * n + t + 1];
            let dout = &dattn[t * d + cols.start..t * d + cols.end];
            let mut dot = T::zero();
            for s in 0..=t {
                let vs = &lt.v[s * d + cols.start..s * d + cols.end];
                dp[s] = dout.iter().zip(vs).map(|(&a, &b)| a * b).sum();
                dot = dot + p[s] * dp[s];
                for (g, &o) in dv[s * d + cols.start..s * d + cols.end].iter_mut().zip(dout) {
                    *g = *g + p[s] * o;
                }
            }
            for s in 0..=t {
                let ds = p[s] * (dp[s] - dot) * scale;
                if ds == T::zero() {
                    continue;
                }
                for i in cols.clone() {
                    dq[t * d + i] = dq[t * d + i] + ds * lt.k[s * d + i];
                    dk[s * d + i] = dk[s * d + i] + ds * lt.q[t * d + i];
                }
            }
        }
    }
    let mut dh1 = vec![T::zero(); n * d];
    for (dproj, wo) in [(&dq, lo.wq), (&dk, lo.wk), (&dv, lo.wv)] {
        xt_dy_acc(&lt.h1, dproj, n, d, d, &mut grads[wo..wo + d * d]);
        matmul_wt_acc(dproj, &w[wo..wo + d * d], n, d, d, &mut dh1);
    }
    let (dg, db) = split_pair(grads, lo.attn_gain, lo.attn_bias, d);
    let dnorm1 = layer_norm_backward(&dh1, &lt.xhat1, &lt.rstd1, &w[lo.attn_gain..lo.attn_gain + d], n, d, dg, db);
    for i in 0..n * d {
        dx[i] = dx[i] + dnorm1[i];
    }
    let _ = &lt.x_in;
    let _ = &lt.x_mid;
}

/// Key/value cache for token-by-token decoding.
#[derive(Debug, Clone)]
pub struct DecodeState<T> {
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
    len: usize,
}

impl<T: Scalar> DecodeState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        let c = &params.config;
        let cap = c.max_seq_len * c.d_model;
        DecodeState {
            keys: (0..c.n_layers).map(|_| Vec::with_capacity(cap)).collect(),
            values: (0..c.n_layers).map(|_| Vec::with_capacity(cap)).collect(),
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Appends one token and returns the logits row at its position.
    pub fn step(&mut self, params: &ModelParams<T>, token: u32) -> Result<Vec<T>, ModelError> {
        let c = &params.config;
        if self.len >= c.max_seq_len {
            return Err(ModelError::SequenceTooLong {
                len: self.len + 1,
                max: c.max_seq_len,
            });
        }
        if token as usize >= c.vocab_size {
            return Err(ModelError::TokenOutOfRange {
                id: token,
                vocab: c.vocab_size,
            });
        }
        let (d, f, v, h, hd) = (c.d_model, c.d_ff, c.vocab_size, c.n_heads, c.head_dim());
        let t = self.len;
        let w = &params.data;
        let off = Offsets::new(c);

        let te = &w[off.tok_emb + token as usize * d..off.tok_emb + (token as usize + 1) * d];
        let pe = &w[off.pos_emb + t * d..off.pos_emb + (t + 1) * d];
        let mut x: Vec<T> = te.iter().zip(pe).map(|(&a, &b)| a + b).collect();
        let mut hrow = vec![T::zero(); d];
        let mut xhat = vec![T::zero(); d];
        let mut q = vec![T::zero(); d];
        let mut tmp = vec![T::zero(); d];
        let mut attn = vec![T::zero(); d];
        let mut probs = vec![T::zero(); t + 1];
        let mut pre = vec![T::zero(); f];
        for (l, lo) in off.layers.iter().enumerate() {
            layer_norm_row(&x, &w[lo.attn_gain..lo.attn_gain + d], &w[lo.attn_bias..lo.attn_bias + d], &mut hrow, &mut xhat);
            row_matmul(&hrow, &w[lo.wq..lo.wq + d * d], d, &mut q);
            row_matmul(&hrow, &w[lo.wk..lo.wk + d * d], d, &mut tmp);
            self.keys[l].extend_from_slice(&tmp);
            row_matmul(&hrow, &w[lo.wv..lo.wv + d * d], d, &mut tmp);
            self.values[l].extend_from_slice(&tmp);
            for head in 0..h {
                attend_row(&q, &self.keys[l], &self.values[l], t, d, head, hd, &mut probs, &mut attn);
            }
            row_matmul(&attn, &w[lo.wo..lo.wo + d * d], d, &mut tmp);
            for i in 0..d {
                x[i] = x[i] + tmp[i];
            }
            layer_norm_row(&x, &w[lo.mlp_gain..lo.mlp_gain + d], &w[lo.mlp_bias..lo.mlp_bias + d], &mut hrow, &mut xhat);
            row_matmul(&hrow, &w[lo.w_in..lo.w_in + d * f], f, &mut pre);
            for u in pre.iter_mut() {
                *u = gelu(*u);
            }
            row_matmul(&pre, &w[lo.w_out..lo.w_out + f * d], d, &mut tmp);
            for i in 0..d {
                x[i] = x[i] + tmp[i];
            }
        }
        layer_norm_row(&x, &w[off.final_gain..off.final_gain + d], &w[off.final_bias..off.final_bias + d], &mut hrow, &mut xhat);
        let mut logits = vec![T::zero(); v];
        row_matmul(&hrow, &w[off.head..off.head + d * v], v, &mut logits);
        self.len += 1;
        Ok(logits)
    }
}
