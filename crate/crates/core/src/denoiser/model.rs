//! Forward and backward passes over a packed batch.
//!
//! All sequences of a batch are stacked into one `N x width` activation
//! matrix so the position-wise projections are single GEMMs; attention runs
//! per sequence and head.

use alloc::vec::Vec;

use super::{DenoiserConfig, DenoiserParameters, MaskedExample};
use crate::corpus::Vocabulary;
use crate::linalg::{gemm, softmax, Mat};
use crate::TokenId;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

pub(crate) struct Sequence {
    tokens: Vec<TokenId>,
    positions: Vec<usize>,
    slot_start: usize,
}

impl Sequence {
    pub fn new(cfg: &DenoiserConfig, condition: &[TokenId], docid: &[TokenId]) -> Self {
        let mut tokens = Vec::with_capacity(condition.len() + 1 + docid.len());
        tokens.extend_from_slice(condition);
        tokens.push(Vocabulary::SEP);
        tokens.extend_from_slice(docid);
        let mut positions: Vec<usize> = (0..condition.len()).collect();
        positions.extend(cfg.max_query_len..cfg.max_query_len + 1 + docid.len());
        Self { tokens, positions, slot_start: condition.len() + 1 }
    }

    fn len(&self) -> usize {
        self.tokens.len()
    }
}

/// Gradient buffer laid out like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub(crate) data: Vec<f64>,
}

impl Gradients {
    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|g| g * g).sum())
    }
}

struct LnCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

fn layer_norm(x: &[f64], g: &[f64], b: &[f64], width: usize) -> (Vec<f64>, LnCache) {
    let rows = x.len() / width;
    let mut y = alloc::vec![0.0; x.len()];
    let mut xhat = alloc::vec![0.0; x.len()];
    let mut rstd = alloc::vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * width..(r + 1) * width];
        let mean = row.iter().sum::<f64>() / width as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width as f64;
        let s = 1.0 / libm::sqrt(var + LN_EPS);
        rstd[r] = s;
        for j in 0..width {
            let h = (row[j] - mean) * s;
            xhat[r * width + j] = h;
            y[r * width + j] = g[j] * h + b[j];
        }
    }
    (y, LnCache { xhat, rstd })
}

/// Accumulates gain/bias gradients and returns the input gradient.
fn layer_norm_backward(dy: &[f64], cache: &LnCache, g: &[f64], dg: &mut [f64], db: &mut [f64], width: usize) -> Vec<f64> {
    let rows = dy.len() / width;
    let mut dx = alloc::vec![0.0; dy.len()];
    let mut dxhat = alloc::vec![0.0; width];
    for r in 0..rows {
        let dyr = &dy[r * width..(r + 1) * width];
        let xh = &cache.xhat[r * width..(r + 1) * width];
        let mut mean_d = 0.0;
        let mut mean_dx = 0.0;
        for j in 0..width {
            dg[j] += dyr[j] * xh[j];
            db[j] += dyr[j];
            dxhat[j] = dyr[j] * g[j];
            mean_d += dxhat[j];
            mean_dx += dxhat[j] * xh[j];
        }
        mean_d /= width as f64;
        mean_dx /= width as f64;
        for j in 0..width {
            dx[r * width + j] = cache.rstd[r] * (dxhat[j] - mean_d - xh[j] * mean_dx);
        }
    }
    dx
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::tanh(GELU_C * (x + 0.044715 * x * x * x)))
}

fn gelu_grad(x: f64) -> f64 {
    let th = libm::tanh(GELU_C * (x + 0.044715 * x * x * x));
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn add_bias(x: &mut [f64], b: &[f64]) {
    for row in x.chunks_exact_mut(b.len()) {
        for (v, bb) in row.iter_mut().zip(b) {
            *v += bb;
        }
    }
}

fn sum_rows(dy: &[f64], db: &mut [f64]) {
    for row in dy.chunks_exact(db.len()) {
        for (d, v) in db.iter_mut().zip(row) {
            *d += v;
        }
    }
}

struct LayerCache {
    ln1: LnCache,
    u: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Attention probabilities per (sequence, head), `n x n` each.
    attn: Vec<Vec<f64>>,
    a: Vec<f64>,
    ln2: LnCache,
    u2: Vec<f64>,
    h: Vec<f64>,
    g: Vec<f64>,
}

pub(crate) struct Forward {
    offsets: Vec<usize>,
    lens: Vec<usize>,
    rows: usize,
    layers: Vec<LayerCache>,
    out_rows: Vec<usize>,
    lnf: LnCache,
    y: Vec<f64>,
    /// Softmax probabilities, one `vocab_size` row per requested output row.
    pub probs: Vec<f64>,
}

/// Runs the model and returns distributions at the requested `(sequence,
/// slot)` rows.
pub(crate) fn forward(params: &DenoiserParameters, seqs: &[Sequence], out: &[(usize, usize)]) -> Forward {
    let cfg = &params.config;
    let lay = &params.layout;
    let p = &params.data;
    let (w, f, v) = (cfg.width, cfg.ffn_width, cfg.vocab_size);
    let (nh, dh) = (cfg.heads, cfg.head_dim());
    let scale = 1.0 / libm::sqrt(dh as f64);

    let mut offsets = Vec::with_capacity(seqs.len());
    let mut rows = 0;
    for s in seqs {
        offsets.push(rows);
        rows += s.len();
    }
    let lens: Vec<usize> = seqs.iter().map(Sequence::len).collect();

    let mut x = alloc::vec![0.0; rows * w];
    for (s, &off) in seqs.iter().zip(&offsets) {
        for (i, (&tok, &pos)) in s.tokens.iter().zip(&s.positions).enumerate() {
            let te = &p[lay.tok_emb.start + tok as usize * w..][..w];
            let pe = &p[lay.pos_emb.start + pos * w..][..w];
            for (j, xv) in x[(off + i) * w..(off + i + 1) * w].iter_mut().enumerate() {
                *xv = te[j] + pe[j];
            }
        }
    }

    let mut layers = Vec::with_capacity(lay.layers.len());
    for l in &lay.layers {
        let (u, ln1) = layer_norm(&x, &p[l.ln1_g.clone()], &p[l.ln1_b.clone()], w);
        let mut q = alloc::vec![0.0; rows * w];
        let mut k = alloc::vec![0.0; rows * w];
        let mut vv = alloc::vec![0.0; rows * w];
        gemm(Mat::new(&u, rows, w), Mat::new(&p[l.wq.clone()], w, w), &mut q, 0.0);
        gemm(Mat::new(&u, rows, w), Mat::new(&p[l.wk.clone()], w, w), &mut k, 0.0);
        gemm(Mat::new(&u, rows, w), Mat::new(&p[l.wv.clone()], w, w), &mut vv, 0.0);

        let mut a = alloc::vec![0.0; rows * w];
        let mut attn = Vec::with_capacity(seqs.len() * nh);
        for (&off, &n) in offsets.iter().zip(&lens) {
            for h in 0..nh {
                let mut pm = alloc::vec![0.0; n * n];
                for i in 0..n {
                    let qi = &q[(off + i) * w + h * dh..][..dh];
                    let row = &mut pm[i * n..(i + 1) * n];
                    for (jj, s) in row.iter_mut().enumerate() {
                        let kj = &k[(off + jj) * w + h * dh..][..dh];
                        *s = scale * qi.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>();
                    }
                    softmax(row);
                    let ai = &mut a[(off + i) * w + h * dh..][..dh];
                    for (jj, &pij) in row.iter().enumerate() {
                        let vj = &vv[(off + jj) * w + h * dh..][..dh];
                        for (o, vx) in ai.iter_mut().zip(vj) {
                            *o += pij * vx;
                        }
                    }
                }
                attn.push(pm);
            }
        }
        gemm(Mat::new(&a, rows, w), Mat::new(&p[l.wo.clone()], w, w), &mut x, 1.0);

        let (u2, ln2) = layer_norm(&x, &p[l.ln2_g.clone()], &p[l.ln2_b.clone()], w);
        let mut hbuf = alloc::vec![0.0; rows * f];
        gemm(Mat::new(&u2, rows, w), Mat::new(&p[l.w1.clone()], w, f), &mut hbuf, 0.0);
        add_bias(&mut hbuf, &p[l.b1.clone()]);
        let g: Vec<f64> = hbuf.iter().map(|&z| gelu(z)).collect();
        gemm(Mat::new(&g, rows, f), Mat::new(&p[l.w2.clone()], f, w), &mut x, 1.0);
        add_bias(&mut x, &p[l.b2.clone()]);

        layers.push(LayerCache { ln1, u, q, k, v: vv, attn, a, ln2, u2, h: hbuf, g });
    }

    let out_rows: Vec<usize> = out.iter().map(|&(b, j)| offsets[b] + seqs[b].slot_start + j).collect();
    let mut gathered = alloc::vec![0.0; out_rows.len() * w];
    for (dst, &r) in gathered.chunks_exact_mut(w).zip(&out_rows) {
        dst.copy_from_slice(&x[r * w..(r + 1) * w]);
    }
    let (y, lnf) = layer_norm(&gathered, &p[lay.lnf_g.clone()], &p[lay.lnf_b.clone()], w);
    let mut probs = alloc::vec![0.0; out_rows.len() * v];
    gemm(Mat::new(&y, out_rows.len(), w), Mat::new(&p[lay.w_out.clone()], w, v), &mut probs, 0.0);
    add_bias(&mut probs, &p[lay.b_out.clone()]);
    for row in probs.chunks_exact_mut(v) {
        softmax(row);
    }

    Forward { offsets, lens, rows, layers, out_rows, lnf, y, probs }
}

/// Backpropagates `dlogits` (one row per output row) into a fresh gradient
/// buffer.
pub(crate) fn backward(params: &DenoiserParameters, seqs: &[Sequence], fwd: &Forward, dlogits: &[f64]) -> Gradients {
    let cfg = &params.config;
    let lay = &params.layout;
    let p = &params.data;
    let (w, f, v) = (cfg.width, cfg.ffn_width, cfg.vocab_size);
    let (nh, dh) = (cfg.heads, cfg.head_dim());
    let scale = 1.0 / libm::sqrt(dh as f64);
    let rows = fwd.rows;
    let m = fwd.out_rows.len();
    let mut grad = alloc::vec![0.0; p.len()];

    gemm(Mat::new(&fwd.y, m, w).t(), Mat::new(dlogits, m, v), &mut grad[lay.w_out.clone()], 1.0);
    sum_rows(dlogits, &mut grad[lay.b_out.clone()]);
    let mut dy = alloc::vec![0.0; m * w];
    gemm(Mat::new(dlogits, m, v), Mat::new(&p[lay.w_out.clone()], w, v).t(), &mut dy, 0.0);
    let (dg, db) = split_pair(&mut grad, &lay.lnf_g, &lay.lnf_b);
    let dgathered = layer_norm_backward(&dy, &fwd.lnf, &p[lay.lnf_g.clone()], dg, db, w);

    let mut dx = alloc::vec![0.0; rows * w];
    for (src, &r) in dgathered.chunks_exact(w).zip(&fwd.out_rows) {
        for (d, s) in dx[r * w..(r + 1) * w].iter_mut().zip(src) {
            *d += s;
        }
    }

    for (l, c) in lay.layers.iter().zip(&fwd.layers).rev() {
        // Feed-forward block; dx flows through the residual unchanged.
        sum_rows(&dx, &mut grad[l.b2.clone()]);
        gemm(Mat::new(&c.g, rows, f).t(), Mat::new(&dx, rows, w), &mut grad[l.w2.clone()], 1.0);
        let mut dh_buf = alloc::vec![0.0; rows * f];
        gemm(Mat::new(&dx, rows, w), Mat::new(&p[l.w2.clone()], f, w).t(), &mut dh_buf, 0.0);
        for (d, &z) in dh_buf.iter_mut().zip(&c.h) {
            *d *= gelu_grad(z);
        }
        sum_rows(&dh_buf, &mut grad[l.b1.clone()]);
        gemm(Mat::new(&c.u2, rows, w).t(), Mat::new(&dh_buf, rows, f), &mut grad[l.w1.clone()], 1.0);
        let mut du2 = alloc::vec![0.0; rows * w];
        gemm(Mat::new(&dh_buf, rows, f), Mat::new(&p[l.w1.clone()], w, f).t(), &mut du2, 0.0);
        let (dg, db) = split_pair(&mut grad, &l.ln2_g, &l.ln2_b);
        let dx_ln2 = layer_norm_backward(&du2, &c.ln2, &p[l.ln2_g.clone()], dg, db, w);
        for (d, s) in dx.iter_mut().zip(&dx_ln2) {
            *d += s;
        }

        // Attention block.
        gemm(Mat::new(&c.a, rows, w).t(), Mat::new(&dx, rows, w), &mut grad[l.wo.clone()], 1.0);
        let mut da = alloc::vec![0.0; rows * w];
        gemm(Mat::new(&dx, rows, w), Mat::new(&p[l.wo.clone()], w, w).t(), &mut da, 0.0);
        let mut dq = alloc::vec![0.0; rows * w];
        let mut dk = alloc::vec![0.0; rows * w];
        let mut dv = alloc::vec![0.0; rows * w];
        let mut ds = Vec::new();
        for (si, (&off, &n)) in fwd.offsets.iter().zip(&fwd.lens).enumerate() {
            for h in 0..nh {
                let pm = &c.attn[si * nh + h];
                ds.clear();
                ds.resize(n * n, 0.0);
                for i in 0..n {
                    let dai = &da[(off + i) * w + h * dh..][..dh];
                    let mut dot_sum = 0.0;
                    for jj in 0..n {
                        let vj = &c.v[(off + jj) * w + h * dh..][..dh];
                        let dp: f64 = dai.iter().zip(vj).map(|(x, y)| x * y).sum();
                        ds[i * n + jj] = dp;
                        dot_sum += dp * pm[i * n + jj];
                        let pij = pm[i * n + jj];
                        for (o, x) in dv[(off + jj) * w + h * dh..][..dh].iter_mut().zip(dai) {
                            *o += pij * x;
                        }
                    }
                    for jj in 0..n {
                        ds[i * n + jj] = pm[i * n + jj] * (ds[i * n + jj] - dot_sum) * scale;
                    }
                }
                for i in 0..n {
                    for jj in 0..n {
                        let s = ds[i * n + jj];
                        if s == 0.0 {
                            continue;
                        }
                        for d in 0..dh {
                            dq[(off + i) * w + h * dh + d] += s * c.k[(off + jj) * w + h * dh + d];
                            dk[(off + jj) * w + h * dh + d] += s * c.q[(off + i) * w + h * dh + d];
                        }
                    }
                }
            }
        }
        let mut du = alloc::vec![0.0; rows * w];
        for (dmat, wr) in [(&dq, &l.wq), (&dk, &l.wk), (&dv, &l.wv)] {
            gemm(Mat::new(&c.u, rows, w).t(), Mat::new(dmat, rows, w), &mut grad[wr.clone()], 1.0);
            gemm(Mat::new(dmat, rows, w), Mat::new(&p[wr.clone()], w, w).t(), &mut du, 1.0);
        }
        let (dg, db) = split_pair(&mut grad, &l.ln1_g, &l.ln1_b);
        let dx_ln1 = layer_norm_backward(&du, &c.ln1, &p[l.ln1_g.clone()], dg, db, w);
        for (d, s) in dx.iter_mut().zip(&dx_ln1) {
            *d += s;
        }
    }

    for (s, &off) in seqs.iter().zip(&fwd.offsets) {
        for (i, (&tok, &pos)) in s.tokens.iter().zip(&s.positions).enumerate() {
            let src = &dx[(off + i) * w..(off + i + 1) * w];
            let te = lay.tok_emb.start + tok as usize * w;
            for (g, d) in grad[te..te + w].iter_mut().zip(src) {
                *g += d;
            }
            let pe = lay.pos_emb.start + pos * w;
            for (g, d) in grad[pe..pe + w].iter_mut().zip(src) {
                *g += d;
            }
        }
    }
    Gradients { data: grad }
}

/// Two disjoint mutable views of the gradient buffer; `a` precedes `b`.
fn split_pair<'a>(
    grad: &'a mut [f64],
    a: &core::ops::Range<usize>,
    b: &core::ops::Range<usize>,
) -> (&'a mut [f64], &'a mut [f64]) {
    debug_assert!(a.end <= b.start);
    let (lo, hi) = grad.split_at_mut(b.start);
    (&mut lo[a.clone()], &mut hi[..b.len()])
}

/// Mean over examples of `weight * sum_masked(-log p(target))`, with its
/// gradient. Only masked slots are projected to the vocabulary.
pub(crate) fn loss_and_gradients(params: &DenoiserParameters, batch: &[MaskedExample]) -> (f64, Gradients) {
    let cfg = &params.config;
    let v = cfg.vocab_size;
    let mut seqs = Vec::with_capacity(batch.len());
    let mut out = Vec::new();
    let mut targets = Vec::new();
    for (b, ex) in batch.iter().enumerate() {
        let mut noisy = ex.target.clone();
        for &i in &ex.mask.positions {
            noisy[i] = Vocabulary::MASK;
            out.push((b, i));
            targets.push((ex.target[i] as usize, ex.mask.weight / batch.len() as f64));
        }
        seqs.push(Sequence::new(cfg, &ex.condition, &noisy));
    }
    let fwd = forward(params, &seqs, &out);
    let mut loss = 0.0;
    let mut dlogits = fwd.probs.clone();
    for (row, &(tgt, coef)) in dlogits.chunks_exact_mut(v).zip(&targets) {
        loss -= coef * libm::log(row[tgt]);
        row[tgt] -= 1.0;
        row.iter_mut().for_each(|d| *d *= coef);
    }
    let grads = backward(params, &seqs, &fwd, &dlogits);
    (loss, grads)
}
