//! Model evaluation, the ablation runner and report emitters.

use super::metrics::{parser_mode_accuracy, weighted_f1, ClassScore, ParserInstance, ParserModeReport, TaskBClass};
use crate::aspectfeat::AspectFlags;
use crate::docmodel::{AnnotatedPage, KeyIntent, Nature};
use crate::dualnet::{instances_of, predict_document, predict_many, train, ModelConfig, ModelError, ModelParams};
use crate::geoenc::PeVariant;
use crate::scalar::Scalar;
use crate::synthform::{corrupt_parser_view, page_from_regions};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, Write};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct IntentBreakdown {
    pub support: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub f1: f64,
}

/// Evaluation of one model on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub run_id: String,
    pub split: String,
    pub nature: Option<Nature>,
    pub instances: usize,
    /// Pages left out because they exceed the model's segment budget.
    pub skipped_pages: usize,
    pub weighted_f1: f64,
    /// Fraction of keys whose exact gold segment (or NO_VALUE) was chosen.
    pub accuracy: f64,
    pub per_class: BTreeMap<String, ClassScore>,
    pub per_intent: BTreeMap<String, IntentBreakdown>,
    /// `confusion[gold][predicted]` over the class labels.
    pub confusion: BTreeMap<String, BTreeMap<String, usize>>,
}

/// Predicts every key of every page and scores the result.
pub fn evaluate_docs<S: Scalar>(
    params: &ModelParams<S>,
    docs: &[AnnotatedPage],
    run_id: &str,
    split: &str,
) -> Result<EvalReport, ModelError> {
    let mut preds = Vec::new();
    let mut golds = Vec::new();
    let mut exact: BTreeMap<KeyIntent, (usize, usize)> = BTreeMap::new();
    let mut skipped = 0;
    for doc in docs {
        let kp = match predict_document(params, doc) {
            Ok(kp) => kp,
            Err(ModelError::TooManySegments { found, max }) => {
                log::warn!("{}: {found} segments exceed the budget of {max}, skipped", doc.doc_id);
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        for k in kp {
            preds.push(TaskBClass::of_prediction(doc, k.predicted));
            golds.push(TaskBClass::gold(k.intent, k.gold.is_some()));
            let e = exact.entry(k.intent).or_default();
            e.0 += usize::from(k.predicted == k.gold);
            e.1 += 1;
        }
    }
    let f1 = weighted_f1(&preds, &golds).map_err(|_| ModelError::EmptyCorpus)?;
    let mut confusion: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    for (p, g) in preds.iter().zip(&golds) {
        *confusion.entry(g.to_string()).or_default().entry(p.to_string()).or_default() += 1;
    }
    let per_intent = exact
        .iter()
        .map(|(intent, &(c, n))| {
            let f1 = f1.per_class.get(&TaskBClass::Intent(*intent)).map_or(0.0, |s| s.f1);
            (intent.name().to_string(), IntentBreakdown { support: n, correct: c, accuracy: c as f64 / n as f64, f1 })
        })
        .collect();
    let correct: usize = exact.values().map(|e| e.0).sum();
    let nature = docs.first().map(|d| d.page.nature).filter(|n| docs.iter().all(|d| d.page.nature == *n));
    Ok(EvalReport {
        run_id: run_id.to_string(),
        split: split.to_string(),
        nature,
        instances: golds.len(),
        skipped_pages: skipped,
        weighted_f1: f1.weighted_f1,
        accuracy: correct as f64 / golds.len() as f64,
        per_class: f1.per_class.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        per_intent,
        confusion,
    })
}

/// Parser-mode evaluation: every page is re-segmented by
/// `corrupt_parser_view`, the model points into the parser regions, and the
/// chosen region is judged by IoU against the gold value box.
pub fn evaluate_parser_mode<S: Scalar>(
    params: &ModelParams<S>,
    docs: &[AnnotatedPage],
    merge_rate: f64,
    split_rate: f64,
    seed: u64,
    threshold: f64,
) -> Result<ParserModeReport, ModelError> {
    let mut instances = Vec::new();
    for (i, doc) in docs.iter().enumerate() {
        let page = &doc.page;
        let regions = corrupt_parser_view(page, merge_rate, split_rate, seed.wrapping_add(i as u64));
        let parsed = page_from_regions(page.page_w, page.page_h, page.nature, &regions);
        let inst = instances_of(doc);
        let texts: Vec<&str> = inst.iter().map(|k| k.key_text.as_str()).collect();
        let preds = match predict_many(&texts, &parsed, params) {
            Ok(p) => p,
            Err(ModelError::TooManySegments { found, max }) => {
                log::warn!("{}: parser view has {found} regions, budget {max}, skipped", doc.doc_id);
                continue;
            }
            Err(e) => return Err(e),
        };
        for (k, p) in inst.iter().zip(preds) {
            instances.push(ParserInstance {
                intent: k.intent,
                predicted: p.map(|r| regions[r].0),
                gold: k.gold.and_then(|g| page.segment(g)).map(|s| s.bbox),
            });
        }
    }
    if instances.is_empty() {
        return Err(ModelError::EmptyCorpus);
    }
    Ok(parser_mode_accuracy(&instances, threshold))
}

/// One cell of an ablation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub aspects: AspectFlags,
    pub pe: PeVariant,
    pub run_id: String,
    /// One report per evaluation split, or the reason the cell failed.
    pub result: Result<Vec<EvalReport>, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationMatrix {
    pub cells: Vec<AblationCell>,
}

impl AblationMatrix {
    pub fn cell(&self, aspects: AspectFlags, pe: PeVariant) -> Option<&AblationCell> {
        self.cells.iter().find(|c| c.aspects == aspects && c.pe == pe)
    }

    /// Weighted F1 of a cell on a split, when the cell trained.
    pub fn f1(&self, aspects: AspectFlags, pe: PeVariant, split: &str) -> Option<f64> {
        let reports = self.cell(aspects, pe)?.result.as_ref().ok()?;
        reports.iter().find(|r| r.split == split).map(|r| r.weighted_f1)
    }
}

/// Trains one model per (aspect set, PE variant) pair with the base seed and
/// evaluates it on every named split. A cell that fails is recorded and the
/// run moves on.
pub fn run_ablation(
    train_docs: &[AnnotatedPage],
    val_docs: &[AnnotatedPage],
    eval_splits: &[(&str, &[AnnotatedPage])],
    base: &ModelConfig,
    aspect_grid: &[AspectFlags],
    pe_grid: &[PeVariant],
) -> AblationMatrix {
    let mut cells = Vec::new();
    for &aspects in aspect_grid {
        for &pe in pe_grid {
            let run_id = format!("aspects={aspects},pe={pe},seed={}", base.seed);
            let cfg = ModelConfig { aspect_flags: aspects, pe_variant: pe, ..base.clone() };
            log::info!("ablation cell {run_id}");
            let result = train::<f32>(train_docs, val_docs, &cfg)
                .and_then(|(params, _)| eval_splits.iter().map(|(name, docs)| evaluate_docs(&params, docs, &run_id, name)).collect())
                .map_err(|e| {
                    log::warn!("ablation cell {run_id} failed: {e}");
                    e.to_string()
                });
            cells.push(AblationCell { aspects, pe, run_id, result });
        }
    }
    AblationMatrix { cells }
}

/// One line of the machine-readable report format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub run_id: String,
    pub split: String,
    pub metric: String,
    /// Class or intent name; `all` for overall figures.
    pub class: String,
    pub value: f64,
}

pub const RECORD_HEADER: &str = "run_id\tsplit\tmetric\tclass\tvalue";

impl EvalReport {
    pub fn records(&self) -> Vec<MetricRecord> {
        let rec = |metric: &str, class: &str, value: f64| MetricRecord {
            run_id: self.run_id.clone(),
            split: self.split.clone(),
            metric: metric.to_string(),
            class: class.to_string(),
            value,
        };
        let mut out = vec![
            rec("weighted_f1", "all", self.weighted_f1),
            rec("accuracy", "all", self.accuracy),
            rec("instances", "all", self.instances as f64),
            rec("skipped_pages", "all", self.skipped_pages as f64),
        ];
        for (c, s) in &self.per_class {
            out.push(rec("precision", c, s.precision));
            out.push(rec("recall", c, s.recall));
            out.push(rec("f1", c, s.f1));
            out.push(rec("support", c, s.support as f64));
        }
        for (i, b) in &self.per_intent {
            out.push(rec("intent_accuracy", i, b.accuracy));
        }
        out
    }

    /// Human-readable table of the per-class and per-intent figures.
    pub fn text_table(&self) -> String {
        let mut s = String::new();
        let nature = self.nature.map_or("mixed", |n| n.name());
        let _ = writeln!(s, "run {}  split {} ({nature})  keys {}", self.run_id, self.split, self.instances);
        let _ = writeln!(s, "weighted F1 {:.4}  accuracy {:.4}", self.weighted_f1, self.accuracy);
        let _ = writeln!(s, "{:<10} {:>9} {:>9} {:>9} {:>8}", "class", "precision", "recall", "f1", "support");
        for (c, sc) in &self.per_class {
            let _ = writeln!(s, "{:<10} {:>9.4} {:>9.4} {:>9.4} {:>8}", c, sc.precision, sc.recall, sc.f1, sc.support);
        }
        let _ = writeln!(s, "{:<10} {:>9} {:>9}", "intent", "accuracy", "keys");
        for (i, b) in &self.per_intent {
            let _ = writeln!(s, "{:<10} {:>9.4} {:>9}", i, b.accuracy, b.support);
        }
        s
    }
}

impl ParserModeReport {
    pub fn records(&self, run_id: &str, split: &str) -> Vec<MetricRecord> {
        let rec = |metric: &str, class: &str, value: f64| MetricRecord {
            run_id: run_id.to_string(),
            split: split.to_string(),
            metric: metric.to_string(),
            class: class.to_string(),
            value,
        };
        let mut out = vec![rec("parser_accuracy", "all", self.accuracy), rec("iou_threshold", "all", self.threshold)];
        out.extend(self.per_intent.iter().map(|(i, a)| rec("parser_accuracy", i, *a)));
        out
    }
}

impl AblationMatrix {
    /// Records of every trained cell plus a `failed` marker for the rest.
    pub fn records(&self) -> Vec<MetricRecord> {
        let mut out = Vec::new();
        for c in &self.cells {
            match &c.result {
                Ok(reports) => out.extend(reports.iter().flat_map(EvalReport::records)),
                Err(_) => out.push(MetricRecord {
                    run_id: c.run_id.clone(),
                    split: "-".into(),
                    metric: "failed".into(),
                    class: "all".into(),
                    value: 1.0,
                }),
            }
        }
        out
    }

    /// Grid of weighted F1 per cell (rows) and split (columns).
    pub fn text_table(&self) -> String {
        let mut splits: Vec<&str> = Vec::new();
        for c in &self.cells {
            if let Ok(reports) = &c.result {
                for r in reports {
                    if !splits.contains(&r.split.as_str()) {
                        splits.push(&r.split);
                    }
                }
            }
        }
        let mut s = String::new();
        let _ = write!(s, "{:<8} {:<7}", "aspects", "pe");
        for sp in &splits {
            let _ = write!(s, " {sp:>12}");
        }
        s.push('\n');
        for c in &self.cells {
            let _ = write!(s, "{:<8} {:<7}", c.aspects.to_string(), c.pe.as_str());
            match &c.result {
                Ok(reports) => {
                    for sp in &splits {
                        match reports.iter().find(|r| r.split == *sp) {
                            Some(r) => {
                                let _ = write!(s, " {:>12.4}", r.weighted_f1);
                            }
                            None => {
                                let _ = write!(s, " {:>12}", "-");
                            }
                        }
                    }
                }
                Err(e) => {
                    let _ = write!(s, " FAILED: {e}");
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Writes records as tab-separated lines under [`RECORD_HEADER`].
pub fn write_records<W: Write>(records: &[MetricRecord], mut out: W) -> io::Result<()> {
    writeln!(out, "{RECORD_HEADER}")?;
    for r in records {
        writeln!(out, "{}\t{}\t{}\t{}\t{}", r.run_id, r.split, r.metric, r.class, r.value)?;
    }
    Ok(())
}
