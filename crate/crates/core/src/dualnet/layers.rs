//! Forward and backward passes of the transformer building blocks.

use crate::scalar::Scalar;
use crate::tensor::{gemm, matmul, matmul_acc, MatMut, MatRef, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::params::{BlockIds, LinearIds, LnIds, ParamStore};

const LN_EPS: f64 = 1e-5;

/// Sums the rows of `dy` into the `1 x cols` gradient `g`.
pub fn add_colsum<S: Scalar>(g: &mut Tensor<S>, dy: &Tensor<S>) {
    for i in 0..dy.rows {
        for (a, &b) in g.data.iter_mut().zip(dy.row(i)) {
            *a += b;
        }
    }
}

pub fn linear_fwd<S: Scalar>(p: &ParamStore<S>, l: LinearIds, x: &Tensor<S>) -> Tensor<S> {
    let w = &p[l.w];
    let mut y = Tensor::zeros(x.rows, w.cols);
    let bias = p[l.b].row(0);
    for i in 0..x.rows {
        y.row_mut(i).copy_from_slice(bias);
    }
    gemm(S::one(), MatRef::of(x), MatRef::of(w), S::one(), MatMut::of(&mut y));
    y
}

/// Accumulates weight and bias gradients only.
pub fn linear_bwd_params<S: Scalar>(g: &mut ParamStore<S>, l: LinearIds, x: &Tensor<S>, dy: &Tensor<S>) {
    matmul_acc(&mut g[l.w], x, true, dy, false);
    add_colsum(&mut g[l.b], dy);
}

pub fn linear_bwd<S: Scalar>(p: &ParamStore<S>, g: &mut ParamStore<S>, l: LinearIds, x: &Tensor<S>, dy: &Tensor<S>) -> Tensor<S> {
    linear_bwd_params(g, l, x, dy);
    matmul(dy, false, &p[l.w], true)
}

pub struct LnCache<S> {
    xhat: Tensor<S>,
    rstd: Vec<S>,
}

pub fn ln_fwd<S: Scalar>(p: &ParamStore<S>, l: LnIds, x: &Tensor<S>) -> (Tensor<S>, LnCache<S>) {
    let d = x.cols;
    let n = S::lit(d as f64);
    let eps = S::lit(LN_EPS);
    let mut xhat = Tensor::zeros(x.rows, d);
    let mut y = Tensor::zeros(x.rows, d);
    let mut rstd = Vec::with_capacity(x.rows);
    let (gamma, beta) = (p[l.g].row(0), p[l.b].row(0));
    for i in 0..x.rows {
        let row = x.row(i);
        let mean = row.iter().copied().sum::<S>() / n;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
        let r = S::one() / (var + eps).sqrt();
        rstd.push(r);
        let xh = xhat.row_mut(i);
        for j in 0..d {
            xh[j] = (row[j] - mean) * r;
        }
        let yr = y.row_mut(i);
        for j in 0..d {
            yr[j] = xhat.data[i * d + j] * gamma[j] + beta[j];
        }
    }
    (y, LnCache { xhat, rstd })
}

pub fn ln_bwd<S: Scalar>(p: &ParamStore<S>, g: &mut ParamStore<S>, l: LnIds, c: &LnCache<S>, dy: &Tensor<S>) -> Tensor<S> {
    let d = dy.cols;
    let n = S::lit(d as f64);
    let gamma = p[l.g].row(0).to_vec();
    let mut dx = Tensor::zeros(dy.rows, d);
    let mut dg = vec![S::zero(); d];
    let mut db = vec![S::zero(); d];
    for i in 0..dy.rows {
        let dyr = dy.row(i);
        let xh = c.xhat.row(i);
        let mut sum_dxh = S::zero();
        let mut sum_dxh_xh = S::zero();
        for j in 0..d {
            dg[j] += dyr[j] * xh[j];
            db[j] += dyr[j];
            let dxh = dyr[j] * gamma[j];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xh[j];
        }
        let (m1, m2) = (sum_dxh / n, sum_dxh_xh / n);
        let r = c.rstd[i];
        let out = dx.row_mut(i);
        for j in 0..d {
            out[j] = r * (dyr[j] * gamma[j] - m1 - xh[j] * m2);
        }
    }
    for (a, b) in g[l.g].data.iter_mut().zip(dg) {
        *a += b;
    }
    for (a, b) in g[l.b].data.iter_mut().zip(db) {
        *a += b;
    }
    dx
}

fn gelu_consts<S: Scalar>() -> (S, S) {
    (S::lit((2.0 / std::f64::consts::PI).sqrt()), S::lit(0.044715))
}

/// Inner `tanh` of the GELU approximation.
fn gelu_tanh<S: Scalar>(x: S) -> S {
    let (c, k) = gelu_consts::<S>();
    (c * (x + k * x * x * x)).tanh()
}

fn gelu_with<S: Scalar>(x: S, t: S) -> S {
    S::lit(0.5) * x * (S::one() + t)
}

/// Tanh approximation of GELU.
pub fn gelu<S: Scalar>(x: S) -> S {
    gelu_with(x, gelu_tanh(x))
}

pub fn gelu_grad<S: Scalar>(x: S) -> S {
    gelu_grad_with(x, gelu_tanh(x))
}

/// GELU derivative given the forward pass's inner `tanh` value `t`.
fn gelu_grad_with<S: Scalar>(x: S, t: S) -> S {
    let (c, k) = gelu_consts::<S>();
    let half = S::lit(0.5);
    let du = c * (S::one() + S::lit(3.0) * k * x * x);
    half * (S::one() + t) + half * x * (S::one() - t * t) * du
}

/// Layout of a batch of equal-length sequences stacked row-wise.
#[derive(Debug, Clone)]
pub struct SeqBatch<'a> {
    pub nseq: usize,
    pub len: usize,
    /// Key positions that may be attended to, shared by every sequence.
    pub valid: &'a [bool],
}

pub struct AttnCache<S> {
    x: Tensor<S>,
    q: Tensor<S>,
    k: Tensor<S>,
    v: Tensor<S>,
    probs: Vec<S>,
    ctx: Tensor<S>,
}

pub fn attn_fwd<S: Scalar>(p: &ParamStore<S>, ids: &BlockIds, x: Tensor<S>, batch: &SeqBatch, heads: usize) -> (Tensor<S>, AttnCache<S>) {
    let d = x.cols;
    let dh = d / heads;
    let l = batch.len;
    let q = linear_fwd(p, ids.q, &x);
    let k = linear_fwd(p, ids.k, &x);
    let v = linear_fwd(p, ids.v, &x);
    let scale = S::one() / S::lit(dh as f64).sqrt();
    let mut probs = vec![S::zero(); batch.nseq * heads * l * l];
    let mut ctx = Tensor::zeros(x.rows, d);
    for s in 0..batch.nseq {
        for h in 0..heads {
            let pb = &mut probs[(s * heads + h) * l * l..(s * heads + h + 1) * l * l];
            gemm(
                scale,
                MatRef::block(&q.data, d, s * l, l, h * dh, dh),
                MatRef::block(&k.data, d, s * l, l, h * dh, dh).t(),
                S::zero(),
                MatMut { data: pb, rows: l, cols: l, rs: l, cs: 1 },
            );
            for i in 0..l {
                masked_softmax(&mut pb[i * l..(i + 1) * l], batch.valid);
            }
            gemm(
                S::one(),
                MatRef { data: pb, rows: l, cols: l, rs: l, cs: 1 },
                MatRef::block(&v.data, d, s * l, l, h * dh, dh),
                S::zero(),
                MatMut::block(&mut ctx.data, d, s * l, l, h * dh, dh),
            );
        }
    }
    let out = linear_fwd(p, ids.o, &ctx);
    (out, AttnCache { x, q, k, v, probs, ctx })
}

fn masked_softmax<S: Scalar>(row: &mut [S], valid: &[bool]) {
    let mut max = S::neg_infinity();
    for (x, &ok) in row.iter().zip(valid) {
        if ok && *x > max {
            max = *x;
        }
    }
    if max == S::neg_infinity() {
        row.iter_mut().for_each(|x| *x = S::zero());
        return;
    }
    let mut sum = S::zero();
    for (x, &ok) in row.iter_mut().zip(valid) {
        *x = if ok { (*x - max).exp() } else { S::zero() };
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

pub fn attn_bwd<S: Scalar>(
    p: &ParamStore<S>,
    g: &mut ParamStore<S>,
    ids: &BlockIds,
    c: &AttnCache<S>,
    dout: &Tensor<S>,
    batch: &SeqBatch,
    heads: usize,
) -> Tensor<S> {
    let d = dout.cols;
    let dh = d / heads;
    let l = batch.len;
    let scale = S::one() / S::lit(dh as f64).sqrt();
    let dctx = linear_bwd(p, g, ids.o, &c.ctx, dout);
    let mut dq = Tensor::zeros(dout.rows, d);
    let mut dk = Tensor::zeros(dout.rows, d);
    let mut dv = Tensor::zeros(dout.rows, d);
    let mut dp = vec![S::zero(); l * l];
    for s in 0..batch.nseq {
        for h in 0..heads {
            let pb = &c.probs[(s * heads + h) * l * l..(s * heads + h + 1) * l * l];
            let pm = MatRef { data: pb, rows: l, cols: l, rs: l, cs: 1 };
            // dV = P^T dCtx
            gemm(
                S::one(),
                pm.t(),
                MatRef::block(&dctx.data, d, s * l, l, h * dh, dh),
                S::zero(),
                MatMut::block(&mut dv.data, d, s * l, l, h * dh, dh),
            );
            // dP = dCtx V^T
            gemm(
                S::one(),
                MatRef::block(&dctx.data, d, s * l, l, h * dh, dh),
                MatRef::block(&c.v.data, d, s * l, l, h * dh, dh).t(),
                S::zero(),
                MatMut { data: &mut dp, rows: l, cols: l, rs: l, cs: 1 },
            );
            // dS = P * (dP - rowsum(dP * P)), scaled for the logits.
            for i in 0..l {
                let pr = &pb[i * l..(i + 1) * l];
                let dr = &mut dp[i * l..(i + 1) * l];
                let dot: S = pr.iter().zip(dr.iter()).map(|(&a, &b)| a * b).sum();
                for (x, &pv) in dr.iter_mut().zip(pr) {
                    *x = pv * (*x - dot) * scale;
                }
            }
            let ds = MatRef { data: &dp, rows: l, cols: l, rs: l, cs: 1 };
            gemm(
                S::one(),
                ds,
                MatRef::block(&c.k.data, d, s * l, l, h * dh, dh),
                S::zero(),
                MatMut::block(&mut dq.data, d, s * l, l, h * dh, dh),
            );
            gemm(
                S::one(),
                ds.t(),
                MatRef::block(&c.q.data, d, s * l, l, h * dh, dh),
                S::zero(),
                MatMut::block(&mut dk.data, d, s * l, l, h * dh, dh),
            );
        }
    }
    let mut dx = linear_bwd(p, g, ids.q, &c.x, &dq);
    dx.add_assign(&linear_bwd(p, g, ids.k, &c.x, &dk));
    dx.add_assign(&linear_bwd(p, g, ids.v, &c.x, &dv));
    dx
}

/// Inverted dropout mask, or `None` when inactive.
fn dropout_mask<S: Scalar>(n: usize, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Option<Vec<S>> {
    let rng = rng?;
    if rate <= 0.0 {
        return None;
    }
    let keep = S::lit(1.0 / (1.0 - rate));
    Some((0..n).map(|_| if rng.random::<f64>() < rate { S::zero() } else { keep }).collect())
}

fn apply_mask<S: Scalar>(t: &mut Tensor<S>, mask: &Option<Vec<S>>) {
    if let Some(m) = mask {
        for (x, &k) in t.data.iter_mut().zip(m) {
            *x *= k;
        }
    }
}

pub struct BlockCache<S> {
    ln1: LnCache<S>,
    attn: AttnCache<S>,
    drop1: Option<Vec<S>>,
    ln2: LnCache<S>,
    a2: Tensor<S>,
    f1: Tensor<S>,
    /// Inner `tanh` of the GELU, kept for the backward pass.
    th: Tensor<S>,
    gl: Tensor<S>,
    drop2: Option<Vec<S>>,
}

/// Pre-LN block: `h = x + Attn(LN(x))`, `y = h + FFN(LN(h))`.
pub fn block_fwd<S: Scalar>(
    p: &ParamStore<S>,
    ids: &BlockIds,
    x: Tensor<S>,
    batch: &SeqBatch,
    heads: usize,
    dropout: f64,
    mut rng: Option<&mut ChaCha8Rng>,
) -> (Tensor<S>, BlockCache<S>) {
    let (a1, ln1) = ln_fwd(p, ids.ln1, &x);
    let (mut att, attn) = attn_fwd(p, ids, a1, batch, heads);
    let drop1 = dropout_mask(att.len(), dropout, rng.as_deref_mut());
    apply_mask(&mut att, &drop1);
    let mut h = x;
    h.add_assign(&att);
    let (a2, ln2) = ln_fwd(p, ids.ln2, &h);
    let f1 = linear_fwd(p, ids.ff1, &a2);
    let th = Tensor::from_vec(f1.rows, f1.cols, f1.data.iter().map(|&x| gelu_tanh(x)).collect());
    let gl = Tensor::from_vec(f1.rows, f1.cols, f1.data.iter().zip(&th.data).map(|(&x, &t)| gelu_with(x, t)).collect());
    let mut f2 = linear_fwd(p, ids.ff2, &gl);
    let drop2 = dropout_mask(f2.len(), dropout, rng);
    apply_mask(&mut f2, &drop2);
    h.add_assign(&f2);
    (h, BlockCache { ln1, attn, drop1, ln2, a2, f1, th, gl, drop2 })
}

pub fn block_bwd<S: Scalar>(
    p: &ParamStore<S>,
    g: &mut ParamStore<S>,
    ids: &BlockIds,
    c: &BlockCache<S>,
    dy: Tensor<S>,
    batch: &SeqBatch,
    heads: usize,
) -> Tensor<S> {
    let mut df = dy.clone();
    apply_mask(&mut df, &c.drop2);
    let mut dgl = linear_bwd(p, g, ids.ff2, &c.gl, &df);
    for ((x, &pre), &t) in dgl.data.iter_mut().zip(&c.f1.data).zip(&c.th.data) {
        *x *= gelu_grad_with(pre, t);
    }
    let da2 = linear_bwd(p, g, ids.ff1, &c.a2, &dgl);
    let mut dh = dy;
    dh.add_assign(&ln_bwd(p, g, ids.ln2, &c.ln2, &da2));
    let mut datt = dh.clone();
    apply_mask(&mut datt, &c.drop1);
    let da1 = attn_bwd(p, g, ids, &c.attn, &datt, batch, heads);
    dh.add_assign(&ln_bwd(p, g, ids.ln1, &c.ln1, &da1));
    dh
}

/// Runs a stack of blocks, returning the output and one cache per block.
pub fn stack_fwd<S: Scalar>(
    p: &ParamStore<S>,
    blocks: &[BlockIds],
    mut x: Tensor<S>,
    batch: &SeqBatch,
    heads: usize,
    dropout: f64,
    mut rng: Option<&mut ChaCha8Rng>,
) -> (Tensor<S>, Vec<BlockCache<S>>) {
    let mut caches = Vec::with_capacity(blocks.len());
    for ids in blocks {
        let (y, c) = block_fwd(p, ids, x, batch, heads, dropout, rng.as_deref_mut());
        caches.push(c);
        x = y;
    }
    (x, caches)
}

pub fn stack_bwd<S: Scalar>(
    p: &ParamStore<S>,
    g: &mut ParamStore<S>,
    blocks: &[BlockIds],
    caches: &[BlockCache<S>],
    mut dy: Tensor<S>,
    batch: &SeqBatch,
    heads: usize,
) -> Tensor<S> {
    for (ids, c) in blocks.iter().zip(caches).rev() {
        dy = block_bwd(p, g, ids, c, dy, batch, heads);
    }
    dy
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_grad_matches_difference() {
        for &x in &[-3.0, -1.0, -0.2, 0.0, 0.4, 1.5, 4.0f64] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "{x}");
        }
        assert!((gelu(1.0f64) - 0.841_191_990_607_477_2).abs() < 1e-12);
    }

    #[test]
    fn masked_softmax_cases() {
        let mut r = vec![1.0f64, 2.0, 3.0];
        masked_softmax(&mut r, &[true, false, true]);
        assert_eq!(r[1], 0.0);
        assert!((r[0] + r[2] - 1.0).abs() < 1e-12);
        let mut z = vec![1.0f64, 2.0];
        masked_softmax(&mut z, &[false, false]);
        assert_eq!(z, vec![0.0, 0.0]);
    }
}
