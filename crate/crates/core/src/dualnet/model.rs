//! Entity encoder, token encoder, dual-level fusion and pointer scorer.

use crate::aspectfeat::{page_features, text_feature, token_bucket};
use crate::docmodel::{BBox, DocumentPage};
use crate::geoenc::{normalized_box, xy_pos_matrix, PeVariant};
use crate::scalar::Scalar;
use crate::tensor::{matmul, matmul_acc, Tensor};
use rand_chacha::ChaCha8Rng;

use super::layers::{add_colsum, linear_bwd_params, linear_fwd, stack_bwd, stack_fwd, BlockCache, SeqBatch};
use super::params::{ModelParams, ParamStore};
use super::{ModelConfig, ModelError};

/// Model inputs derived from one page, independent of the key.
#[derive(Debug, Clone)]
pub struct PreparedPage<S> {
    pub page_w: f64,
    pub page_h: f64,
    /// Segment id per row; `None` marks a padding row.
    pub seg_ids: Vec<Option<usize>>,
    pub seg_valid: Vec<bool>,
    pub seg_boxes: Vec<BBox>,
    /// Raw multi-aspect features, one row per segment slot.
    pub aspects: Tensor<S>,
    pub seg_norm: Tensor<S>,
    pub tok_buckets: Vec<usize>,
    pub tok_boxes: Vec<BBox>,
    pub tok_norm: Tensor<S>,
    /// Token boxes relative to their parent segment box.
    pub tok_rel: Tensor<S>,
    /// Number of page tokens dropped by the token budget.
    pub truncated_tokens: usize,
}

impl<S: Scalar> PreparedPage<S> {
    pub fn n_seg(&self) -> usize {
        self.seg_ids.len()
    }

    pub fn n_tok(&self) -> usize {
        self.tok_buckets.len()
    }
}

/// Computes features and token inputs for `page`. `pad_to` appends
/// masked segment slots up to that count.
pub fn prepare_page<S: Scalar>(page: &DocumentPage, cfg: &ModelConfig, pad_to: Option<usize>) -> Result<PreparedPage<S>, ModelError> {
    let n_real = page.segments.len();
    if n_real > cfg.max_segments {
        return Err(ModelError::TooManySegments { found: n_real, max: cfg.max_segments });
    }
    let n = pad_to.unwrap_or(n_real).max(n_real);
    let f = cfg.feature_dim();
    let mut aspects = Tensor::zeros(n, f);
    for (i, feat) in page_features(page, cfg.aspect_flags, cfg.aspect_layout).iter().enumerate() {
        feat.write_into(aspects.row_mut(i));
    }
    let mut seg_boxes: Vec<BBox> = page.segments.iter().map(|s| s.bbox).collect();
    seg_boxes.resize(n, BBox::new(0.0, 0.0, 0.0, 0.0));
    let norm = |boxes: &[BBox]| {
        let rows: Vec<S> = boxes.iter().flat_map(|b| normalized_box(b, page.page_w, page.page_h)).map(S::lit).collect();
        Tensor::from_vec(boxes.len(), 4, rows)
    };
    let kept = page.tokens.len().min(cfg.max_tokens);
    let truncated = page.tokens.len() - kept;
    if truncated > 0 {
        log::debug!("token budget {} drops {truncated} of {} tokens", cfg.max_tokens, page.tokens.len());
    }
    let toks = &page.tokens[..kept];
    let tok_boxes: Vec<BBox> = toks.iter().map(|t| t.bbox).collect();
    let rel: Vec<S> = toks
        .iter()
        .flat_map(|t| {
            let parent = page.segments.get(t.parent).map_or(t.bbox, |s| s.bbox);
            normalized_box(&t.bbox.translate(-parent.x, -parent.y), parent.w.max(1.0), parent.h.max(1.0))
        })
        .map(S::lit)
        .collect();
    Ok(PreparedPage {
        page_w: page.page_w,
        page_h: page.page_h,
        seg_ids: (0..n).map(|i| (i < n_real).then(|| page.segments[i].id)).collect(),
        seg_valid: (0..n).map(|i| i < n_real).collect(),
        seg_norm: norm(&seg_boxes),
        seg_boxes,
        aspects,
        tok_buckets: toks.iter().map(|t| token_bucket(&t.text, cfg.token_buckets)).collect(),
        tok_norm: norm(&tok_boxes),
        tok_rel: Tensor::from_vec(kept, 4, rel),
        tok_boxes,
        truncated_tokens: truncated,
    })
}

/// Hashed text feature of the key, limited to `max_key_tokens` words.
pub fn key_features<S: Scalar>(key_texts: &[&str], cfg: &ModelConfig) -> Tensor<S> {
    let rows: Vec<Vec<S>> = key_texts
        .iter()
        .map(|t| {
            let words: Vec<&str> = t.split_whitespace().take(cfg.max_key_tokens).collect();
            text_feature(&words.join(" "), cfg.aspect_layout.d_t).into_iter().map(S::lit).collect()
        })
        .collect();
    if rows.is_empty() {
        return Tensor::zeros(0, cfg.aspect_layout.d_t);
    }
    Tensor::from_rows(&rows)
}

/// Entity encoder output for a batch of keys on one page.
#[derive(Debug, Clone)]
pub struct EntityOutput<S> {
    /// `B * (1 + N)` rows; row `b * (1 + N)` is the key slot of key `b`.
    pub hidden: Tensor<S>,
    pub n_seg: usize,
}

impl<S: Scalar> EntityOutput<S> {
    pub fn key_slot(&self, b: usize) -> &[S] {
        self.hidden.row(b * (1 + self.n_seg))
    }

    /// Segment rows of key `b`.
    pub fn segments(&self, b: usize) -> Tensor<S> {
        let le = 1 + self.n_seg;
        self.hidden.slice_rows(b * le + 1, (b + 1) * le)
    }
}

/// Everything the backward pass needs.
pub struct ForwardCache<S> {
    batch: usize,
    a_std: Tensor<S>,
    keys: Tensor<S>,
    ent_valid: Vec<bool>,
    ent_caches: Vec<BlockCache<S>>,
    tok_valid: Vec<bool>,
    tok_caches: Vec<BlockCache<S>>,
    dual_valid: Vec<bool>,
    dual_caches: Vec<BlockCache<S>>,
    ent_len: usize,
    dual_len: usize,
    key_vec: Tensor<S>,
    e_dual: Tensor<S>,
    tanh_seg: Tensor<S>,
    tanh_null: Tensor<S>,
}

/// Scores for each key over `[NO_VALUE, segment slots...]`, plus
/// intermediate representations.
pub struct ForwardOutput<S> {
    pub scores: Tensor<S>,
    pub entity: EntityOutput<S>,
    pub tokens: Tensor<S>,
    pub e_dual: Tensor<S>,
    pub t_dual: Tensor<S>,
    pub cache: ForwardCache<S>,
}

fn standardize<S: Scalar>(m: &ModelParams<S>, a: &Tensor<S>) -> Tensor<S> {
    let mean = m.store[m.ids.aspect_mean].row(0);
    let std = m.store[m.ids.aspect_std].row(0);
    let mut out = a.clone();
    for i in 0..out.rows {
        for (j, x) in out.row_mut(i).iter_mut().enumerate() {
            *x = (*x - mean[j]) / std[j];
        }
    }
    out
}

fn broadcast_rows<S: Scalar>(t: &mut Tensor<S>, row: &[S]) {
    for i in 0..t.rows {
        for (a, &b) in t.row_mut(i).iter_mut().zip(row) {
            *a += b;
        }
    }
}

/// Positional encodings for segment and token rows under the configured variant.
pub fn positional<S: Scalar>(m: &ModelParams<S>, page: &PreparedPage<S>) -> (Tensor<S>, Tensor<S>) {
    let cfg = &m.config;
    let d = cfg.d_model;
    match cfg.pe_variant {
        PeVariant::Xy => (
            xy_pos_matrix(&page.seg_boxes, page.page_w, page.page_h, cfg.xy),
            xy_pos_matrix(&page.tok_boxes, page.page_w, page.page_h, cfg.xy),
        ),
        PeVariant::Linear => {
            let w = &m.store[m.ids.pe_linear];
            (matmul(&page.seg_norm, false, w, false), matmul(&page.tok_norm, false, w, false))
        }
        PeVariant::None => (Tensor::zeros(page.n_seg(), d), Tensor::zeros(page.n_tok(), d)),
    }
}

/// Forward pass for every key in `keys` (one row of text features each).
/// With `rng` set, dropout is active.
pub fn forward<S: Scalar>(
    m: &ModelParams<S>,
    page: &PreparedPage<S>,
    keys: &Tensor<S>,
    mut rng: Option<&mut ChaCha8Rng>,
) -> ForwardOutput<S> {
    let cfg = &m.config;
    let p = &m.store;
    let ids = &m.ids;
    let d = cfg.d_model;
    let heads = cfg.attn_heads;
    let nb = keys.rows;
    let n = page.n_seg();
    let tn = page.n_tok();

    // Entity encoder over [key; segments] for each key.
    let a_std = standardize(m, &page.aspects);
    let x_seg = linear_fwd(p, ids.aspect_proj, &a_std);
    let k0 = linear_fwd(p, ids.key_proj, keys);
    let le = 1 + n;
    let mut xe = Tensor::zeros(nb * le, d);
    for b in 0..nb {
        xe.row_mut(b * le).copy_from_slice(k0.row(b));
        for i in 0..n {
            xe.row_mut(b * le + 1 + i).copy_from_slice(x_seg.row(i));
        }
    }
    let mut ent_valid = vec![true];
    ent_valid.extend_from_slice(&page.seg_valid);
    let eb = SeqBatch { nseq: nb, len: le, valid: &ent_valid };
    let (he, ent_caches) = stack_fwd(p, &ids.entity, xe, &eb, heads, cfg.dropout, rng.as_deref_mut());

    // Token encoder, shared by all keys.
    let mut xt = linear_fwd(p, ids.tok_box, &page.tok_rel);
    for (j, &bucket) in page.tok_buckets.iter().enumerate() {
        for (a, &e) in xt.row_mut(j).iter_mut().zip(p[ids.tok_emb].row(bucket)) {
            *a += e;
        }
    }
    let tok_valid = vec![true; tn];
    let tb = SeqBatch { nseq: 1, len: tn, valid: &tok_valid };
    let (t_out, tok_caches) = stack_fwd(p, &ids.token, xt, &tb, heads, cfg.dropout, rng.as_deref_mut());

    // Dual-level fusion over [key?; E + PE; T + PE].
    let (pe_seg, pe_tok) = positional(m, page);
    let ks = usize::from(cfg.key_in_sequence);
    let ld = ks + n + tn;
    let lvl = &p[ids.level_emb];
    let mut xd = Tensor::zeros(nb * ld, d);
    for b in 0..nb {
        let base = b * ld;
        if ks == 1 {
            let r = xd.row_mut(base);
            for j in 0..d {
                r[j] = he.get(b * le, j) + lvl.get(0, j);
            }
        }
        for i in 0..n {
            let r = xd.row_mut(base + ks + i);
            for j in 0..d {
                r[j] = he.get(b * le + 1 + i, j) + pe_seg.get(i, j) + lvl.get(1, j);
            }
        }
        for t in 0..tn {
            let r = xd.row_mut(base + ks + n + t);
            for j in 0..d {
                r[j] = t_out.get(t, j) + pe_tok.get(t, j) + lvl.get(2, j);
            }
        }
    }
    let mut dual_valid = vec![true; ks];
    dual_valid.extend_from_slice(&page.seg_valid);
    dual_valid.extend_from_slice(&tok_valid);
    let db = SeqBatch { nseq: nb, len: ld, valid: &dual_valid };
    let (hd, dual_caches) = stack_fwd(p, &ids.dual, xd, &db, heads, cfg.dropout, rng);

    // Pointer scorer.
    let mut key_vec = Tensor::zeros(nb, d);
    let mut e_dual = Tensor::zeros(nb * n, d);
    let mut t_dual = Tensor::zeros(nb * tn, d);
    for b in 0..nb {
        let src = if ks == 1 { hd.row(b * ld) } else { he.row(b * le) };
        key_vec.row_mut(b).copy_from_slice(src);
        for i in 0..n {
            e_dual.row_mut(b * n + i).copy_from_slice(hd.row(b * ld + ks + i));
        }
        for t in 0..tn {
            t_dual.row_mut(b * tn + t).copy_from_slice(hd.row(b * ld + ks + n + t));
        }
    }
    let h = cfg.scorer_hidden;
    let mut pre = matmul(&e_dual, false, &p[ids.scorer_e], false);
    let pre_a = matmul(&a_std, false, &p[ids.scorer_a], false);
    let pre_k = matmul(&key_vec, false, &p[ids.scorer_k], false);
    let bias = p[ids.scorer_b].row(0);
    for b in 0..nb {
        for i in 0..n {
            let r = pre.row_mut(b * n + i);
            for j in 0..h {
                r[j] += pre_a.get(i, j) + bias[j];
                if cfg.key_in_scorer {
                    r[j] += pre_k.get(b, j);
                }
            }
        }
    }
    let tanh_seg = Tensor::from_vec(pre.rows, h, pre.data.iter().map(|x| x.tanh()).collect());
    let s_seg = matmul(&tanh_seg, false, &p[ids.scorer_v], false);
    let mut npre = matmul(&key_vec, false, &p[ids.null_w], false);
    broadcast_rows(&mut npre, p[ids.null_b].row(0));
    let tanh_null = Tensor::from_vec(nb, h, npre.data.iter().map(|x| x.tanh()).collect());
    let s_null = matmul(&tanh_null, false, &p[ids.null_v], false);

    let mut scores = Tensor::zeros(nb, 1 + n);
    for b in 0..nb {
        let r = scores.row_mut(b);
        r[0] = s_null.data[b];
        for i in 0..n {
            r[1 + i] = if page.seg_valid[i] { s_seg.data[b * n + i] } else { S::neg_infinity() };
        }
    }

    ForwardOutput {
        scores,
        entity: EntityOutput { hidden: he, n_seg: n },
        tokens: t_out,
        e_dual: e_dual.clone(),
        t_dual,
        cache: ForwardCache {
            batch: nb,
            a_std,
            keys: keys.clone(),
            ent_valid,
            ent_caches,
            tok_valid,
            tok_caches,
            dual_valid,
            dual_caches,
            ent_len: le,
            dual_len: ld,
            key_vec,
            e_dual,
            tanh_seg,
            tanh_null,
        },
    }
}

/// Accumulates parameter gradients for upstream score gradients `dscores`
/// (`B x (1 + N)`; entries of masked slots are ignored).
pub fn backward<S: Scalar>(m: &ModelParams<S>, page: &PreparedPage<S>, c: &ForwardCache<S>, dscores: &Tensor<S>, g: &mut ParamStore<S>) {
    let cfg = &m.config;
    let p = &m.store;
    let ids = &m.ids;
    let d = cfg.d_model;
    let heads = cfg.attn_heads;
    let h = cfg.scorer_hidden;
    let nb = c.batch;
    let n = page.n_seg();
    let tn = page.n_tok();
    let ks = usize::from(cfg.key_in_sequence);
    let (le, ld) = (c.ent_len, c.dual_len);

    let mut ds_seg = Tensor::zeros(nb * n, 1);
    let mut ds_null = Tensor::zeros(nb, 1);
    for b in 0..nb {
        ds_null.data[b] = dscores.get(b, 0);
        for i in 0..n {
            if page.seg_valid[i] {
                ds_seg.data[b * n + i] = dscores.get(b, 1 + i);
            }
        }
    }

    // NO_VALUE head.
    matmul_acc(&mut g[ids.null_v], &c.tanh_null, true, &ds_null, false);
    let mut dn = matmul(&ds_null, false, &p[ids.null_v], true);
    for (x, &t) in dn.data.iter_mut().zip(&c.tanh_null.data) {
        *x *= S::one() - t * t;
    }
    add_colsum(&mut g[ids.null_b], &dn);
    matmul_acc(&mut g[ids.null_w], &c.key_vec, true, &dn, false);
    let mut dkey = matmul(&dn, false, &p[ids.null_w], true);

    // Segment head.
    matmul_acc(&mut g[ids.scorer_v], &c.tanh_seg, true, &ds_seg, false);
    let mut dpre = matmul(&ds_seg, false, &p[ids.scorer_v], true);
    for (x, &t) in dpre.data.iter_mut().zip(&c.tanh_seg.data) {
        *x *= S::one() - t * t;
    }
    add_colsum(&mut g[ids.scorer_b], &dpre);
    matmul_acc(&mut g[ids.scorer_e], &c.e_dual, true, &dpre, false);
    let de_dual = matmul(&dpre, false, &p[ids.scorer_e], true);
    let mut dpre_a = Tensor::zeros(n, h);
    let mut dpre_k = Tensor::zeros(nb, h);
    for b in 0..nb {
        for i in 0..n {
            let r = dpre.row(b * n + i);
            for j in 0..h {
                dpre_a.data[i * h + j] += r[j];
                dpre_k.data[b * h + j] += r[j];
            }
        }
    }
    matmul_acc(&mut g[ids.scorer_a], &c.a_std, true, &dpre_a, false);
    if cfg.key_in_scorer {
        matmul_acc(&mut g[ids.scorer_k], &c.key_vec, true, &dpre_k, false);
        dkey.add_assign(&matmul(&dpre_k, false, &p[ids.scorer_k], true));
    }

    // Dual encoder.
    let mut dhd = Tensor::zeros(nb * ld, d);
    let mut dhe = Tensor::zeros(nb * le, d);
    for b in 0..nb {
        for i in 0..n {
            dhd.row_mut(b * ld + ks + i).copy_from_slice(de_dual.row(b * n + i));
        }
        let target = if ks == 1 { dhd.row_mut(b * ld) } else { dhe.row_mut(b * le) };
        for (a, &x) in target.iter_mut().zip(dkey.row(b)) {
            *a += x;
        }
    }
    let db = SeqBatch { nseq: nb, len: ld, valid: &c.dual_valid };
    let dxd = stack_bwd(p, g, &ids.dual, &c.dual_caches, dhd, &db, heads);

    let mut dpe_seg = Tensor::zeros(n, d);
    let mut dpe_tok = Tensor::zeros(tn, d);
    let mut dlvl = Tensor::zeros(3, d);
    for b in 0..nb {
        if ks == 1 {
            let src = dxd.row(b * ld);
            for j in 0..d {
                dhe.data[b * le * d + j] += src[j];
                dlvl.data[j] += src[j];
            }
        }
        for i in 0..n {
            let src = dxd.row(b * ld + ks + i);
            for j in 0..d {
                dhe.data[(b * le + 1 + i) * d + j] += src[j];
                dpe_seg.data[i * d + j] += src[j];
                dlvl.data[d + j] += src[j];
            }
        }
        for t in 0..tn {
            let src = dxd.row(b * ld + ks + n + t);
            for j in 0..d {
                dpe_tok.data[t * d + j] += src[j];
                dlvl.data[2 * d + j] += src[j];
            }
        }
    }
    g[ids.level_emb].add_assign(&dlvl);
    if cfg.pe_variant == PeVariant::Linear {
        matmul_acc(&mut g[ids.pe_linear], &page.seg_norm, true, &dpe_seg, false);
        matmul_acc(&mut g[ids.pe_linear], &page.tok_norm, true, &dpe_tok, false);
    }

    // Token encoder; the dual gradient wrt token inputs is dpe_tok.
    let tb = SeqBatch { nseq: 1, len: tn, valid: &c.tok_valid };
    let dxt = stack_bwd(p, g, &ids.token, &c.tok_caches, dpe_tok, &tb, heads);
    linear_bwd_params(g, ids.tok_box, &page.tok_rel, &dxt);
    for (t, &bucket) in page.tok_buckets.iter().enumerate() {
        let emb = g[ids.tok_emb].row_mut(bucket);
        for (a, &x) in emb.iter_mut().zip(dxt.row(t)) {
            *a += x;
        }
    }

    // Entity encoder.
    let eb = SeqBatch { nseq: nb, len: le, valid: &c.ent_valid };
    let dxe = stack_bwd(p, g, &ids.entity, &c.ent_caches, dhe, &eb, heads);
    let mut dk0 = Tensor::zeros(nb, d);
    let mut dx_seg = Tensor::zeros(n, d);
    for b in 0..nb {
        dk0.row_mut(b).copy_from_slice(dxe.row(b * le));
        for i in 0..n {
            for (a, &x) in dx_seg.row_mut(i).iter_mut().zip(dxe.row(b * le + 1 + i)) {
                *a += x;
            }
        }
    }
    linear_bwd_params(g, ids.key_proj, &c.keys, &dk0);
    linear_bwd_params(g, ids.aspect_proj, &c.a_std, &dx_seg);
}

/// Softmax cross-entropy per key, averaged over keys, and its gradient
/// with respect to the scores. `golds[b]` is the class index (0 = NO_VALUE).
pub fn softmax_ce<S: Scalar>(scores: &Tensor<S>, golds: &[usize]) -> (S, Tensor<S>) {
    let nb = scores.rows;
    let mut grad = Tensor::zeros(scores.rows, scores.cols);
    let mut loss = S::zero();
    let inv = S::one() / S::lit(nb.max(1) as f64);
    for b in 0..nb {
        let r = scores.row(b);
        let max = r.iter().copied().fold(S::neg_infinity(), S::max);
        let mut sum = S::zero();
        for &x in r {
            if x != S::neg_infinity() {
                sum += (x - max).exp();
            }
        }
        let lse = max + sum.ln();
        loss += (lse - r[golds[b]]) * inv;
        let gr = grad.row_mut(b);
        for (j, &x) in r.iter().enumerate() {
            let pj = if x == S::neg_infinity() { S::zero() } else { (x - lse).exp() };
            gr[j] = (pj - if j == golds[b] { S::one() } else { S::zero() }) * inv;
        }
    }
    (loss, grad)
}

/// Index of the highest score; ties go to the lowest index, so NO_VALUE
/// (index 0) wins a tie with any segment.
pub fn argmax_lowest<S: Scalar>(row: &[S]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Maps a score-vector index back to a segment id (`None` = NO_VALUE).
pub fn class_to_segment<S: Scalar>(page: &PreparedPage<S>, class: usize) -> Option<usize> {
    if class == 0 {
        None
    } else {
        page.seg_ids[class - 1]
    }
}
