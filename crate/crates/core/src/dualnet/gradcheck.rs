//! Central finite-difference check of the analytic gradients.

use crate::docmodel::{BBox, DocumentPage, LayoutCategory, Nature, Segment};
use crate::synthform::tile_tokens;
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{backward, forward, key_features, prepare_page, softmax_ce};
use super::params::{ModelParams, ParamStore};
use super::{ModelConfig, ModelError};

const STEP: f64 = 1e-5;
/// Denominator floor of the relative error, so entries whose true gradient is
/// numerically zero are compared in absolute terms.
const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorError {
    pub name: String,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub tensors: Vec<TensorError>,
    pub tolerance: f64,
}

/// Compares `grad` against central differences of `loss` for every trainable
/// entry of `store`. An empty store passes vacuously.
pub fn check_gradients<L, G>(store: &mut ParamStore<f64>, loss: L, grad: G, tolerance: f64) -> Result<GradCheckReport, ModelError>
where
    L: Fn(&ParamStore<f64>) -> f64,
    G: Fn(&ParamStore<f64>) -> ParamStore<f64>,
{
    let analytic = grad(store);
    let mut tensors = Vec::new();
    for t in 0..store.len() {
        if !store.trainable[t] {
            continue;
        }
        let mut worst: f64 = 0.0;
        for i in 0..store.tensors[t].len() {
            let orig = store.tensors[t].data[i];
            store.tensors[t].data[i] = orig + STEP;
            let up = loss(store);
            store.tensors[t].data[i] = orig - STEP;
            let down = loss(store);
            store.tensors[t].data[i] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let a = analytic.tensors[t].data[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            worst = worst.max(rel);
        }
        tensors.push(TensorError { name: store.names[t].clone(), max_rel_error: worst });
    }
    let max_rel_error = tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max);
    let failed: Vec<String> = tensors.iter().filter(|t| !(t.max_rel_error <= tolerance)).map(|t| t.name.clone()).collect();
    if !failed.is_empty() {
        return Err(ModelError::GradientMismatch { tensors: failed, max_rel_error });
    }
    Ok(GradCheckReport { max_rel_error, tensors, tolerance })
}

/// A two-segment page with a key on the left and its value on the right.
pub(crate) fn check_page() -> DocumentPage {
    let segments = vec![
        Segment::new(
            0,
            BBox::new(60.0, 100.0, 80.0, 14.0),
            "Name of holder",
            LayoutCategory::FormKey,
            Some(crate::docmodel::KeyIntent::HoldNm),
        ),
        Segment::new(
            1,
            BBox::new(170.0, 98.0, 120.0, 16.0),
            "Acme Pty Ltd",
            LayoutCategory::FormValue,
            Some(crate::docmodel::KeyIntent::HoldNm),
        ),
    ];
    let tokens = segments.iter().flat_map(|s| tile_tokens(s.id, &s.bbox, &s.text)).collect();
    DocumentPage { page_w: 400.0, page_h: 300.0, nature: Nature::Digital, segments, tokens }
}

/// Checks the full model on the tiny config in `f64`. `fault` names a tensor
/// whose analytic gradient is deliberately corrupted before comparison.
pub fn gradient_check(cfg: &ModelConfig, seed: u64, tolerance: f64, fault: Option<&str>) -> Result<GradCheckReport, ModelError> {
    let cfg = ModelConfig { seed, dropout: 0.0, ..cfg.clone() };
    let mut model = ModelParams::<f64>::init(&cfg)?;
    // Move every tensor away from its structured init (zero biases, unit
    // gains) so that all code paths carry signal.
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9c);
    for (t, &tr) in model.store.tensors.iter_mut().zip(&model.store.trainable) {
        if tr {
            for x in &mut t.data {
                *x += rng.random_range(-0.3..0.3);
            }
        }
    }
    let page = check_page();
    let prepared = prepare_page::<f64>(&page, &cfg, None)?;
    let f = cfg.feature_dim();
    let mean: Vec<f64> = (0..f).map(|_| rng.random_range(-0.2..0.2)).collect();
    let std: Vec<f64> = (0..f).map(|_| rng.random_range(0.5..2.0)).collect();
    model.set_standardization(&mean, &std);
    let keys = key_features::<f64>(&["Name of holder", "Present voting power"], &cfg);
    let golds = [2usize, 0];

    let ids = model.ids.clone();
    let config = model.config.clone();
    let with_store = |store: &ParamStore<f64>| ModelParams { config: config.clone(), store: store.clone(), ids: ids.clone() };
    let loss = |store: &ParamStore<f64>| {
        let m = with_store(store);
        let out = forward(&m, &prepared, &keys, None);
        softmax_ce(&out.scores, &golds).0
    };
    let grad = |store: &ParamStore<f64>| {
        let m = with_store(store);
        let out = forward(&m, &prepared, &keys, None);
        let (_, ds) = softmax_ce(&out.scores, &golds);
        let mut g = store.zeros_like();
        backward(&m, &prepared, &out.cache, &ds, &mut g);
        if let Some(name) = fault {
            if let Some(id) = g.id(name) {
                let t: &mut Tensor<f64> = &mut g.tensors[id.0];
                for x in &mut t.data {
                    *x = *x * 1.5 + 0.01;
                }
            }
        }
        g
    };
    check_gradients(&mut model.store, loss, grad, tolerance)
}
