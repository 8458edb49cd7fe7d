//! Minibatch SGD over pages.

use crate::docmodel::AnnotatedPage;
use crate::evalkit::{weighted_f1, TaskBClass};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{self, Write};

use super::model::{argmax_lowest, backward, class_to_segment, forward, key_features, prepare_page, softmax_ce, PreparedPage};
use super::params::ModelParams;
use super::{gold_class, instances_of, predict_prepared, ModelConfig, ModelError, TaskBInstance};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    /// Weighted F1 of the predictions made during the epoch's training passes.
    pub train_f1: f64,
    pub val_f1: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned.
    pub selected_epoch: usize,
    pub skipped_pages: usize,
}

struct Example<'a, S> {
    doc: &'a AnnotatedPage,
    page: PreparedPage<S>,
    instances: Vec<TaskBInstance>,
    keys: Tensor<S>,
    golds: Vec<usize>,
}

fn prepare<'a, S: Scalar>(docs: &'a [AnnotatedPage], cfg: &ModelConfig, skipped: &mut usize) -> Vec<Example<'a, S>> {
    let mut out = Vec::with_capacity(docs.len());
    for doc in docs {
        let page = match prepare_page(&doc.page, cfg, None) {
            Ok(p) => p,
            Err(e) => {
                log::warn!("skipping {}: {e}", doc.doc_id);
                *skipped += 1;
                continue;
            }
        };
        let instances = instances_of(doc);
        if instances.is_empty() {
            continue;
        }
        let texts: Vec<&str> = instances.iter().map(|i| i.key_text.as_str()).collect();
        let keys = key_features(&texts, cfg);
        let golds = instances.iter().map(|i| gold_class(&page, i.gold)).collect();
        out.push(Example { doc, page, instances, keys, golds });
    }
    out
}

/// Column means and standard deviations of the aspect features over every
/// segment of `docs`.
pub fn aspect_statistics(docs: &[AnnotatedPage], cfg: &ModelConfig) -> (Vec<f64>, Vec<f64>) {
    let f = cfg.feature_dim();
    let mut sum = vec![0.0; f];
    let mut sq = vec![0.0; f];
    let mut n = 0usize;
    for doc in docs {
        for feat in crate::aspectfeat::page_features(&doc.page, cfg.aspect_flags, cfg.aspect_layout) {
            for (j, x) in feat.to_vec::<f64>().into_iter().enumerate() {
                sum[j] += x;
                sq[j] += x * x;
            }
            n += 1;
        }
    }
    let n = n.max(1) as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std = sq.iter().zip(&mean).map(|(q, m)| (q / n - m * m).max(0.0).sqrt()).collect();
    (mean, std)
}

fn classes<S: Scalar>(ex: &Example<S>, preds: &[Option<usize>]) -> (Vec<TaskBClass>, Vec<TaskBClass>) {
    let p = preds.iter().map(|&x| TaskBClass::of_prediction(ex.doc, x)).collect();
    let g = ex.instances.iter().map(|i| TaskBClass::gold(i.intent, i.gold.is_some())).collect();
    (p, g)
}

fn evaluate<S: Scalar>(params: &ModelParams<S>, set: &[Example<S>]) -> Option<f64> {
    let mut preds = Vec::new();
    let mut golds = Vec::new();
    for ex in set {
        let texts: Vec<&str> = ex.instances.iter().map(|i| i.key_text.as_str()).collect();
        let (p, g) = classes(ex, &predict_prepared(params, &ex.page, &texts));
        preds.extend(p);
        golds.extend(g);
    }
    weighted_f1(&preds, &golds).ok().map(|r| r.weighted_f1)
}

/// Trains a model on `train_docs`, one page per step, and reports per-epoch
/// loss and weighted F1. Runs are bit-reproducible for a fixed config seed.
pub fn train<S: Scalar>(
    train_docs: &[AnnotatedPage],
    val_docs: &[AnnotatedPage],
    cfg: &ModelConfig,
) -> Result<(ModelParams<S>, TrainHistory), ModelError> {
    cfg.validate()?;
    let mut history = TrainHistory::default();
    let train_set = prepare::<S>(train_docs, cfg, &mut history.skipped_pages);
    if train_set.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    let val_set = prepare::<S>(val_docs, cfg, &mut history.skipped_pages);

    let mut params = ModelParams::<S>::init(cfg)?;
    let (mean, std) = aspect_statistics(train_docs, cfg);
    params.set_standardization(&mean, &std);

    let mut grads = params.store.zeros_like();
    let mut velocity = params.store.zeros_like();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5e_ed0f_da7a);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xd_8090u64);
    let sched = cfg.schedule;
    let total_steps = sched.epochs * train_set.len();
    let momentum = S::lit(sched.momentum);
    let mut step = 0;
    let mut best: Option<(f64, ModelParams<S>, usize)> = None;

    for epoch in 1..=sched.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut preds = Vec::new();
        let mut golds = Vec::new();
        let mut lr = 0.0;
        for &idx in &order {
            let ex = &train_set[idx];
            let rng = (cfg.dropout > 0.0).then_some(&mut dropout_rng);
            let out = forward(&params, &ex.page, &ex.keys, rng);
            let (loss, dscores) = softmax_ce(&out.scores, &ex.golds);
            let loss = loss.to_f64_lossy();
            if !loss.is_finite() {
                return Err(ModelError::Diverged { epoch, step, loss });
            }
            loss_sum += loss;
            let chosen: Vec<Option<usize>> =
                (0..out.scores.rows).map(|b| class_to_segment(&ex.page, argmax_lowest(out.scores.row(b)))).collect();
            let (p, g) = classes(ex, &chosen);
            preds.extend(p);
            golds.extend(g);

            grads.fill_zero();
            backward(&params, &ex.page, &out.cache, &dscores, &mut grads);
            let norm =
                grads.tensors.iter().zip(&grads.trainable).filter(|(_, &t)| t).map(|(t, _)| t.norm_sq().to_f64_lossy()).sum::<f64>().sqrt();
            if !norm.is_finite() {
                return Err(ModelError::Diverged { epoch, step, loss: norm });
            }
            let clip = if sched.clip_norm > 0.0 && norm > sched.clip_norm { sched.clip_norm / norm } else { 1.0 };
            lr = sched.lr_at(step, total_steps);
            let scale = S::lit(lr * clip);
            for ((w, (gr, vel)), &tr) in
                params.store.tensors.iter_mut().zip(grads.tensors.iter().zip(velocity.tensors.iter_mut())).zip(&params.store.trainable)
            {
                if !tr {
                    continue;
                }
                for ((x, &dx), v) in w.data.iter_mut().zip(&gr.data).zip(vel.data.iter_mut()) {
                    *v = momentum * *v + dx * scale;
                    *x -= *v;
                }
            }
            step += 1;
        }
        let train_f1 = weighted_f1(&preds, &golds).map(|r| r.weighted_f1).unwrap_or(0.0);
        let val_f1 = if val_set.is_empty() { None } else { evaluate(&params, &val_set) };
        let rec = EpochRecord { epoch, loss: loss_sum / train_set.len() as f64, lr, train_f1, val_f1 };
        log::info!(
            "epoch {epoch}: loss {:.4} train wF1 {:.4} val wF1 {}",
            rec.loss,
            rec.train_f1,
            val_f1.map_or("-".into(), |v| format!("{v:.4}"))
        );
        history.epochs.push(rec);
        if sched.keep_best {
            if let Some(v) = val_f1 {
                if best.as_ref().is_none_or(|(b, _, _)| v > *b) {
                    best = Some((v, params.clone(), epoch));
                }
            }
        }
    }
    history.selected_epoch = sched.epochs;
    if let Some((_, p, epoch)) = best {
        params = p;
        history.selected_epoch = epoch;
    }
    Ok((params, history))
}

/// Plain-text metrics log: a comment header, then one tab-separated line
/// per epoch.
pub fn write_metrics_log<W: Write>(history: &TrainHistory, mut out: W) -> io::Result<()> {
    writeln!(out, "# epoch\tloss\tlr\ttrain_weighted_f1\tval_weighted_f1")?;
    for r in &history.epochs {
        let val = r.val_f1.map_or("-".to_string(), |v| format!("{v:.6}"));
        writeln!(out, "{}\t{:.6}\t{:.6}\t{:.6}\t{val}", r.epoch, r.loss, r.lr, r.train_f1)?;
    }
    writeln!(out, "# selected_epoch\t{}", history.selected_epoch)?;
    Ok(())
}
