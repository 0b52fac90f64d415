//! Forward pass and analytic backpropagation.

use crate::activation::Activation;
use crate::bounds::softmax_in_place;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::{BlockParams, ModelConfig, ModelParams, Norm};

/// Added to the variance (or mean square) inside the norm layers.
pub const NORM_EPS: f64 = 1e-12;

fn mm(a: &Matrix, b: &Matrix) -> Matrix {
    a.matmul_unchecked(b)
}

/// `aᵀ b`
fn tmm(a: &Matrix, b: &Matrix) -> Matrix {
    a.t_matmul(b).expect("internal shapes agree")
}

/// `a bᵀ`
fn mmt(a: &Matrix, b: &Matrix) -> Matrix {
    a.matmul_t(b).expect("internal shapes agree")
}

fn col_block(m: &Matrix, start: usize, width: usize) -> Matrix {
    let mut out = Matrix::zeros(m.rows(), width);
    for i in 0..m.rows() {
        out.row_mut(i).copy_from_slice(&m.row(i)[start..start + width]);
    }
    out
}

fn put_col_block(dst: &mut Matrix, start: usize, src: &Matrix) {
    for i in 0..src.rows() {
        dst.row_mut(i)[start..start + src.cols()].copy_from_slice(src.row(i));
    }
}

#[derive(Clone, Debug)]
pub(crate) struct NormCache {
    xhat: Matrix,
    rstd: Vec<f64>,
}

pub(crate) fn norm_forward(kind: Norm, x: &Matrix, gain: &Matrix) -> (Matrix, NormCache) {
    let (t, d) = x.shape();
    let mut xhat = x.clone();
    let mut rstd = Vec::with_capacity(t);
    for i in 0..t {
        let row = xhat.row_mut(i);
        if kind == Norm::LayerNorm {
            let mean = row.iter().sum::<f64>() / d as f64;
            row.iter_mut().for_each(|v| *v -= mean);
        }
        let ms = row.iter().map(|v| v * v).sum::<f64>() / d as f64;
        let r = 1.0 / (ms + NORM_EPS).sqrt();
        row.iter_mut().for_each(|v| *v *= r);
        rstd.push(r);
    }
    let mut y = xhat.clone();
    for i in 0..t {
        y.row_mut(i).iter_mut().zip(gain.as_slice()).for_each(|(v, g)| *v *= g);
    }
    (y, NormCache { xhat, rstd })
}

fn norm_backward(kind: Norm, dy: &Matrix, gain: &Matrix, cache: &NormCache, dgain: &mut Matrix) -> Matrix {
    let (t, d) = dy.shape();
    let mut dx = Matrix::zeros(t, d);
    let g = gain.as_slice();
    for i in 0..t {
        let xh = cache.xhat.row(i);
        let dyr = dy.row(i);
        let dg = dgain.as_mut_slice();
        let mut dxhat = vec![0.0; d];
        for j in 0..d {
            dg[j] += dyr[j] * xh[j];
            dxhat[j] = dyr[j] * g[j];
        }
        let proj = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        let mean = if kind == Norm::LayerNorm { dxhat.iter().sum::<f64>() / d as f64 } else { 0.0 };
        let r = cache.rstd[i];
        for (j, out) in dx.row_mut(i).iter_mut().enumerate() {
            *out = r * (dxhat[j] - mean - xh[j] * proj);
        }
    }
    dx
}

/// Borrowed attention projections.
#[derive(Clone, Copy)]
pub(crate) struct AttnWeights<'a> {
    pub wq: &'a Matrix,
    pub wk: &'a Matrix,
    pub wv: &'a Matrix,
    pub wo: &'a Matrix,
}

#[derive(Clone, Debug)]
pub(crate) struct AttnGrads {
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub wo: Matrix,
}

#[derive(Clone, Debug)]
pub(crate) struct AttnCache {
    q: Matrix,
    k: Matrix,
    v: Matrix,
    probs: Vec<Matrix>,
    concat: Matrix,
}

/// Causal multi-head attention `concat_h(softmax(Q_h K_hᵀ/√d_h) V_h) W_O`.
pub(crate) fn attention_forward(x: &Matrix, w: AttnWeights<'_>, n_heads: usize) -> (Matrix, AttnCache) {
    let t = x.rows();
    let d = w.wq.cols();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let (q, k, v) = (mm(x, w.wq), mm(x, w.wk), mm(x, w.wv));
    let mut concat = Matrix::zeros(t, d);
    let mut probs = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let (qh, kh, vh) = (col_block(&q, h * dh, dh), col_block(&k, h * dh, dh), col_block(&v, h * dh, dh));
        let mut a = mmt(&qh, &kh);
        for i in 0..t {
            let row = a.row_mut(i);
            row[..=i].iter_mut().for_each(|s| *s *= scale);
            softmax_in_place(&mut row[..=i]);
            row[i + 1..].iter_mut().for_each(|s| *s = 0.0);
        }
        put_col_block(&mut concat, h * dh, &mm(&a, &vh));
        probs.push(a);
    }
    (mm(&concat, w.wo), AttnCache { q, k, v, probs, concat })
}

pub(crate) fn attention_backward(
    x: &Matrix,
    w: AttnWeights<'_>,
    cache: &AttnCache,
    dout: &Matrix,
    n_heads: usize,
) -> (Matrix, AttnGrads) {
    let t = x.rows();
    let d = w.wq.cols();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let gwo = tmm(&cache.concat, dout);
    let dconcat = mmt(dout, w.wo);
    let (mut dq, mut dk, mut dv) = (Matrix::zeros(t, d), Matrix::zeros(t, d), Matrix::zeros(t, d));
    for h in 0..n_heads {
        let a = &cache.probs[h];
        let (qh, kh, vh) = (
            col_block(&cache.q, h * dh, dh),
            col_block(&cache.k, h * dh, dh),
            col_block(&cache.v, h * dh, dh),
        );
        let doh = col_block(&dconcat, h * dh, dh);
        let da = mmt(&doh, &vh);
        put_col_block(&mut dv, h * dh, &tmm(a, &doh));
        let mut ds = Matrix::zeros(t, t);
        for i in 0..t {
            let (ar, dar) = (a.row(i), da.row(i));
            let inner: f64 = ar[..=i].iter().zip(&dar[..=i]).map(|(p, g)| p * g).sum();
            for (j, out) in ds.row_mut(i)[..=i].iter_mut().enumerate() {
                *out = scale * ar[j] * (dar[j] - inner);
            }
        }
        put_col_block(&mut dq, h * dh, &mm(&ds, &kh));
        put_col_block(&mut dk, h * dh, &tmm(&ds, &qh));
    }
    let grads = AttnGrads { wq: tmm(x, &dq), wk: tmm(x, &dk), wv: tmm(x, &dv), wo: gwo };
    let mut dx = mmt(&dq, w.wq);
    dx.add_assign(&mmt(&dk, w.wk)).expect("same shape");
    dx.add_assign(&mmt(&dv, w.wv)).expect("same shape");
    (dx, grads)
}

#[derive(Clone, Debug)]
pub(crate) struct BlockCache {
    n1: NormCache,
    n1_out: Matrix,
    attn: AttnCache,
    n2: NormCache,
    n2_out: Matrix,
    z: Matrix,
    phi: Matrix,
}

fn attn_weights(b: &BlockParams) -> AttnWeights<'_> {
    AttnWeights { wq: &b.wq, wk: &b.wk, wv: &b.wv, wo: &b.wo }
}

fn block_forward_cached(b: &BlockParams, cfg: &ModelConfig, x: &Matrix) -> (Matrix, BlockCache) {
    let (n1_out, n1) = norm_forward(cfg.norm, x, &b.ln1);
    let (attn_out, attn) = attention_forward(&n1_out, attn_weights(b), cfg.n_heads);
    let x2 = x.add(&attn_out).expect("residual shapes agree");
    let (n2_out, n2) = norm_forward(cfg.norm, &x2, &b.ln2);
    let z = mm(&n2_out, &b.w1);
    let act = cfg.activation;
    let phi = Matrix::from_vec_unchecked(z.rows(), z.cols(), z.as_slice().iter().map(|&v| act.apply(v)).collect());
    let out = x2.add(&mm(&phi, &b.w2)).expect("residual shapes agree");
    (out, BlockCache { n1, n1_out, attn, n2, n2_out, z, phi })
}

/// Output of one transformer block for input hidden states `x` (T × d).
pub fn block_forward(params: &ModelParams, layer: usize, x: &Matrix) -> Result<Matrix> {
    let b = params
        .blocks
        .get(layer)
        .ok_or_else(|| Error::Argument(format!("block {layer} out of range")))?;
    if x.cols() != params.config.d_model || x.rows() == 0 {
        return Err(Error::Shape(format!("block input must be T×{}, got {:?}", params.config.d_model, x.shape())));
    }
    Ok(block_forward_cached(b, &params.config, x).0)
}

fn block_backward(b: &BlockParams, cfg: &ModelConfig, cache: &BlockCache, dout: &Matrix, g: &mut BlockParams) -> Matrix {
    let act: Activation = cfg.activation;
    // MLP branch.
    g.w2.add_assign(&tmm(&cache.phi, dout)).expect("same shape");
    let dphi = mmt(dout, &b.w2);
    let mut dz = dphi;
    for (v, &z) in dz.as_mut_slice().iter_mut().zip(cache.z.as_slice()) {
        *v *= act.derivative(z);
    }
    g.w1.add_assign(&tmm(&cache.n2_out, &dz)).expect("same shape");
    let dn2 = mmt(&dz, &b.w1);
    let mut dx2 = dout.clone();
    dx2.add_assign(&norm_backward(cfg.norm, &dn2, &b.ln2, &cache.n2, &mut g.ln2)).expect("same shape");
    // Attention branch.
    let (dn1, ag) = attention_backward(&cache.n1_out, attn_weights(b), &cache.attn, &dx2, cfg.n_heads);
    g.wq.add_assign(&ag.wq).expect("same shape");
    g.wk.add_assign(&ag.wk).expect("same shape");
    g.wv.add_assign(&ag.wv).expect("same shape");
    g.wo.add_assign(&ag.wo).expect("same shape");
    let mut dx = dx2;
    dx.add_assign(&norm_backward(cfg.norm, &dn1, &b.ln1, &cache.n1, &mut g.ln1)).expect("same shape");
    dx
}

/// Hidden states, attention patterns, logits and loss of one sequence.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// `H⁽⁰⁾ … H⁽ᴸ⁾`, each `T × d`.
    pub hidden: Vec<Matrix>,
    /// Per layer, one causal attention matrix per head.
    pub attention: Vec<Vec<Matrix>>,
    pub logits: Matrix,
    /// Mean next-token cross-entropy over positions `0..T−1`.
    pub loss: f64,
    pub(crate) tokens: Vec<usize>,
    caches: Vec<BlockCache>,
    final_norm: NormCache,
    final_out: Matrix,
}

fn validate_tokens(cfg: &ModelConfig, tokens: &[usize]) -> Result<()> {
    if tokens.len() < 2 {
        return Err(Error::Input(format!("need at least 2 tokens for next-token loss, got {}", tokens.len())));
    }
    if tokens.len() > cfg.seq_len {
        return Err(Error::Input(format!("sequence length {} exceeds seq_len {}", tokens.len(), cfg.seq_len)));
    }
    if let Some((pos, &tok)) = tokens.iter().enumerate().find(|(_, &t)| t >= cfg.vocab) {
        return Err(Error::Input(format!("token {tok} at position {pos} out of range for vocab {}", cfg.vocab)));
    }
    Ok(())
}

pub fn forward(params: &ModelParams, tokens: &[usize]) -> Result<ForwardTrace> {
    let cfg = &params.config;
    validate_tokens(cfg, tokens)?;
    let (t, d) = (tokens.len(), cfg.d_model);
    let mut h = Matrix::zeros(t, d);
    for (i, &tok) in tokens.iter().enumerate() {
        h.row_mut(i).copy_from_slice(params.embed.row(tok));
    }
    let mut hidden = vec![h];
    let mut caches = Vec::with_capacity(cfg.n_layers);
    let mut attention = Vec::with_capacity(cfg.n_layers);
    for b in &params.blocks {
        let (out, cache) = block_forward_cached(b, cfg, hidden.last().expect("non-empty"));
        attention.push(cache.attn.probs.clone());
        caches.push(cache);
        hidden.push(out);
    }
    let (final_out, final_norm) = norm_forward(cfg.norm, hidden.last().expect("non-empty"), &params.ln_f);
    let logits = mmt(&final_out, &params.embed);
    let mut loss = 0.0;
    for i in 0..t - 1 {
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[tokens[i + 1]];
    }
    loss /= (t - 1) as f64;
    Ok(ForwardTrace { hidden, attention, logits, loss, tokens: tokens.to_vec(), caches, final_norm, final_out })
}

/// Loss and analytic gradients for one sequence.
pub fn backward(params: &ModelParams, tokens: &[usize]) -> Result<(f64, ModelParams)> {
    let trace = forward(params, tokens)?;
    let mut grads = params.zeros_like();
    accumulate_gradients(params, &trace, 1.0, &mut grads);
    Ok((trace.loss, grads))
}

/// Mean loss and mean gradients over a batch of sequences, reduced in batch
/// order.
pub fn batch_gradients(params: &ModelParams, batch: &[Vec<usize>]) -> Result<(f64, ModelParams)> {
    if batch.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    let w = 1.0 / batch.len() as f64;
    let mut grads = params.zeros_like();
    let mut loss = 0.0;
    for seq in batch {
        let trace = forward(params, seq)?;
        loss += w * trace.loss;
        accumulate_gradients(params, &trace, w, &mut grads);
    }
    Ok((loss, grads))
}

fn accumulate_gradients(params: &ModelParams, trace: &ForwardTrace, weight: f64, grads: &mut ModelParams) {
    let cfg = &params.config;
    let t = trace.tokens.len();
    let mut dlogits = trace.logits.clone();
    let inv = weight / (t - 1) as f64;
    for i in 0..t {
        let row = dlogits.row_mut(i);
        if i == t - 1 {
            row.iter_mut().for_each(|v| *v = 0.0);
            continue;
        }
        softmax_in_place(row);
        row[trace.tokens[i + 1]] -= 1.0;
        row.iter_mut().for_each(|v| *v *= inv);
    }
    grads.embed.add_assign(&tmm(&dlogits, &trace.final_out)).expect("same shape");
    let dfinal = mm(&dlogits, &params.embed);
    let mut dh = norm_backward(cfg.norm, &dfinal, &params.ln_f, &trace.final_norm, &mut grads.ln_f);
    for l in (0..cfg.n_layers).rev() {
        dh = block_backward(&params.blocks[l], cfg, &trace.caches[l], &dh, &mut grads.blocks[l]);
    }
    for (i, &tok) in trace.tokens.iter().enumerate() {
        grads.embed.row_mut(tok).iter_mut().zip(dh.row(i)).for_each(|(g, v)| *g += v);
    }
}
