//! The key-to-value pointer model: entity and token encoders, XY-Pos
//! dual-level fusion, pointer scorer and training.

mod config;
mod gradcheck;
pub mod layers;
mod model;
mod params;
mod train;

pub use config::{ModelConfig, Schedule};
pub use gradcheck::{check_gradients, gradient_check, GradCheckReport, TensorError};
pub use model::{
    argmax_lowest, backward, class_to_segment, forward, key_features, positional, prepare_page, softmax_ce, EntityOutput, ForwardOutput,
    PreparedPage,
};
pub use params::{init_params, ModelIds, ModelParams, ParamId, ParamStore};
pub use train::{aspect_statistics, train, write_metrics_log, EpochRecord, TrainHistory};

use crate::docmodel::{AnnotatedPage, DocumentPage, KeyIntent};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("page has {found} segments, more than max_segments = {max}")]
    TooManySegments { found: usize, max: usize },
    #[error("params shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("params file format: {0}")]
    Format(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },
    #[error("gradient check failed (max relative error {max_rel_error:.3e}) in: {}", tensors.join(", "))]
    GradientMismatch { tensors: Vec<String>, max_rel_error: f64 },
}

/// One Task-B query: find the value of `key_text` on `page`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskBInstance {
    pub intent: KeyIntent,
    pub key_text: String,
    /// Gold value segment id, `None` when the value was left empty.
    pub gold: Option<usize>,
}

/// The queries of a page, one per link, in link order. The key text is the
/// text of the key segment as it appears on the page.
pub fn instances_of(doc: &AnnotatedPage) -> Vec<TaskBInstance> {
    doc.links
        .iter()
        .map(|l| TaskBInstance {
            intent: l.intent,
            key_text: doc.page.segment(l.key_segment).map_or_else(|| l.intent.canonical_key_text().to_string(), |s| s.text.clone()),
            gold: l.value_segment,
        })
        .collect()
}

/// Score-vector class of a gold answer: 0 for NO_VALUE, else `1 + row`.
pub fn gold_class<S: Scalar>(page: &PreparedPage<S>, gold: Option<usize>) -> usize {
    match gold {
        None => 0,
        Some(id) => 1 + page.seg_ids.iter().position(|&s| s == Some(id)).expect("gold segment present on page"),
    }
}

/// Entity encoder output for a single key: one row per segment, key slot
/// available through [`EntityOutput::key_slot`].
pub fn encode_entities<S: Scalar>(page: &DocumentPage, key_text: &str, params: &ModelParams<S>) -> Result<EntityOutput<S>, ModelError> {
    let prepared = prepare_page(page, &params.config, None)?;
    let keys = key_features(&[key_text], &params.config);
    Ok(forward(params, &prepared, &keys, None).entity)
}

/// Token encoder output, one row per kept token.
pub fn encode_tokens<S: Scalar>(page: &DocumentPage, params: &ModelParams<S>) -> Result<Tensor<S>, ModelError> {
    let prepared = prepare_page(page, &params.config, None)?;
    let keys = key_features::<S>(&[""], &params.config);
    Ok(forward(params, &prepared, &keys, None).tokens)
}

/// Dual-encoded entity and token rows for one key.
pub fn dual_encode<S: Scalar>(page: &DocumentPage, key_text: &str, params: &ModelParams<S>) -> Result<(Tensor<S>, Tensor<S>), ModelError> {
    let prepared = prepare_page(page, &params.config, None)?;
    let keys = key_features(&[key_text], &params.config);
    let out = forward(params, &prepared, &keys, None);
    Ok((out.e_dual, out.t_dual))
}

/// Scores over `[NO_VALUE, segment 0, segment 1, ...]` for each key text.
pub fn pointer_scores<S: Scalar>(page: &DocumentPage, key_texts: &[&str], params: &ModelParams<S>) -> Result<Tensor<S>, ModelError> {
    let prepared = prepare_page(page, &params.config, None)?;
    let keys = key_features(key_texts, &params.config);
    Ok(forward(params, &prepared, &keys, None).scores)
}

/// Segment id holding the value of `key_text`, or `None` for NO_VALUE.
pub fn predict<S: Scalar>(key_text: &str, page: &DocumentPage, params: &ModelParams<S>) -> Result<Option<usize>, ModelError> {
    Ok(predict_many(&[key_text], page, params)?.remove(0))
}

pub fn predict_many<S: Scalar>(key_texts: &[&str], page: &DocumentPage, params: &ModelParams<S>) -> Result<Vec<Option<usize>>, ModelError> {
    let prepared = prepare_page(page, &params.config, None)?;
    Ok(predict_prepared(params, &prepared, key_texts))
}

pub fn predict_prepared<S: Scalar>(params: &ModelParams<S>, page: &PreparedPage<S>, key_texts: &[&str]) -> Vec<Option<usize>> {
    if key_texts.is_empty() {
        return Vec::new();
    }
    let keys = key_features(key_texts, &params.config);
    let scores = forward(params, page, &keys, None).scores;
    (0..scores.rows).map(|b| class_to_segment(page, argmax_lowest(scores.row(b)))).collect()
}

/// Prediction for every link of an annotated page.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyPrediction {
    pub intent: KeyIntent,
    pub predicted: Option<usize>,
    pub gold: Option<usize>,
}

pub fn predict_document<S: Scalar>(params: &ModelParams<S>, doc: &AnnotatedPage) -> Result<Vec<KeyPrediction>, ModelError> {
    let inst = instances_of(doc);
    let texts: Vec<&str> = inst.iter().map(|i| i.key_text.as_str()).collect();
    let preds = predict_many(&texts, &doc.page, params)?;
    Ok(inst.iter().zip(preds).map(|(i, p)| KeyPrediction { intent: i.intent, predicted: p, gold: i.gold }).collect())
}
