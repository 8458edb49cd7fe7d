//! Classification and agreement metrics.

use crate::docmodel::{iou, AnnotatedPage, BBox, KeyIntent, Role};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricError {
    #[error("metric needs at least one instance")]
    Empty,
    #[error("length mismatch: {0} predictions vs {1} references")]
    LengthMismatch(usize, usize),
}

/// The label space scored by weighted F1: the intent of the retrieved value,
/// `NoValue`, or `Invalid` when the chosen segment is not a value at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskBClass {
    Intent(KeyIntent),
    NoValue,
    Invalid,
}

impl TaskBClass {
    /// Gold class for a key: its intent when a value exists, else `NoValue`.
    pub fn gold(intent: KeyIntent, has_value: bool) -> Self {
        if has_value {
            TaskBClass::Intent(intent)
        } else {
            TaskBClass::NoValue
        }
    }

    /// Class of a predicted segment id (`None` = NO_VALUE) on `page`.
    pub fn of_prediction(doc: &AnnotatedPage, pred: Option<usize>) -> Self {
        match pred.and_then(|id| doc.page.segment(id)) {
            None if pred.is_none() => TaskBClass::NoValue,
            None => TaskBClass::Invalid,
            Some(s) => match (s.role, s.intent) {
                (Some(Role::Value), Some(intent)) => TaskBClass::Intent(intent),
                _ => TaskBClass::Invalid,
            },
        }
    }
}

impl fmt::Display for TaskBClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskBClass::Intent(i) => f.write_str(i.name()),
            TaskBClass::NoValue => f.write_str("NO_VALUE"),
            TaskBClass::Invalid => f.write_str("INVALID"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct F1Report<L: Ord> {
    pub weighted_f1: f64,
    pub accuracy: f64,
    pub per_class: BTreeMap<L, ClassScore>,
}

fn check_lengths<A, B>(a: &[A], b: &[B]) -> Result<(), MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

/// Support-weighted mean of per-class F1. Every label seen in either list is
/// reported; classes with no gold support get weight zero.
pub fn weighted_f1<L: Ord + Clone>(preds: &[L], golds: &[L]) -> Result<F1Report<L>, MetricError> {
    check_lengths(preds, golds)?;
    let mut tp: BTreeMap<L, usize> = BTreeMap::new();
    let mut pred_n: BTreeMap<L, usize> = BTreeMap::new();
    let mut gold_n: BTreeMap<L, usize> = BTreeMap::new();
    for (p, g) in preds.iter().zip(golds) {
        *pred_n.entry(p.clone()).or_default() += 1;
        *gold_n.entry(g.clone()).or_default() += 1;
        if p == g {
            *tp.entry(p.clone()).or_default() += 1;
        }
    }
    let total = golds.len();
    let mut per_class = BTreeMap::new();
    let mut weighted = 0.0;
    let labels: std::collections::BTreeSet<L> = pred_n.keys().chain(gold_n.keys()).cloned().collect();
    for l in labels {
        let t = tp.get(&l).copied().unwrap_or(0) as f64;
        let np = pred_n.get(&l).copied().unwrap_or(0) as f64;
        let support = gold_n.get(&l).copied().unwrap_or(0);
        let precision = if np > 0.0 { t / np } else { 0.0 };
        let recall = if support > 0 { t / support as f64 } else { 0.0 };
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        weighted += f1 * support as f64 / total as f64;
        per_class.insert(l, ClassScore { precision, recall, f1, support });
    }
    let correct: usize = tp.values().sum();
    Ok(F1Report { weighted_f1: weighted, accuracy: correct as f64 / total as f64, per_class })
}

/// One parser-mode instance: the predicted region (or NO_VALUE) against the
/// gold value box (or an empty value).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParserInstance {
    pub intent: KeyIntent,
    pub predicted: Option<BBox>,
    pub gold: Option<BBox>,
}

impl ParserInstance {
    pub fn is_correct(&self, threshold: f64) -> bool {
        match (self.predicted, self.gold) {
            (None, None) => true,
            (Some(p), Some(g)) => iou(&p, &g) >= threshold,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParserModeReport {
    pub threshold: f64,
    pub accuracy: f64,
    pub instances: usize,
    pub per_intent: BTreeMap<String, f64>,
}

/// Fraction of instances whose predicted box reaches `threshold` IoU with
/// the gold box (inclusive); NO_VALUE is correct only when no value exists.
pub fn parser_mode_accuracy(instances: &[ParserInstance], threshold: f64) -> ParserModeReport {
    let mut hits: BTreeMap<KeyIntent, (usize, usize)> = BTreeMap::new();
    let mut correct = 0;
    for inst in instances {
        let ok = inst.is_correct(threshold);
        correct += usize::from(ok);
        let e = hits.entry(inst.intent).or_default();
        e.0 += usize::from(ok);
        e.1 += 1;
    }
    ParserModeReport {
        threshold,
        accuracy: if instances.is_empty() { 0.0 } else { correct as f64 / instances.len() as f64 },
        instances: instances.len(),
        per_intent: hits.into_iter().map(|(k, (c, n))| (k.name().to_string(), c as f64 / n as f64)).collect(),
    }
}

/// Cohen's kappa `(p_o - p_e) / (1 - p_e)`; 1 when both agreements are 1.
pub fn cohen_kappa<L: Ord + Clone>(a: &[L], b: &[L]) -> Result<f64, MetricError> {
    check_lengths(a, b)?;
    let n = a.len() as f64;
    let mut ca: BTreeMap<&L, f64> = BTreeMap::new();
    let mut cb: BTreeMap<&L, f64> = BTreeMap::new();
    let mut agree = 0.0;
    for (x, y) in a.iter().zip(b) {
        *ca.entry(x).or_default() += 1.0;
        *cb.entry(y).or_default() += 1.0;
        if x == y {
            agree += 1.0;
        }
    }
    let po = agree / n;
    let pe: f64 = ca.iter().map(|(l, c)| c / n * cb.get(l).copied().unwrap_or(0.0) / n).sum();
    if (1.0 - pe).abs() < 1e-15 {
        return Ok(if (po - 1.0).abs() < 1e-15 { 1.0 } else { 0.0 });
    }
    Ok((po - pe) / (1.0 - pe))
}

/// Fraction of positions where the two label lists differ.
pub fn hamming_loss<L: PartialEq>(a: &[L], b: &[L]) -> Result<f64, MetricError> {
    check_lengths(a, b)?;
    Ok(a.iter().zip(b).filter(|(x, y)| x != y).count() as f64 / a.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn f1_hand_cases() {
        let r = weighted_f1(&["A", "B", "B"], &["A", "A", "B"]).unwrap();
        assert!((r.per_class["A"].f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.per_class["B"].f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.weighted_f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(weighted_f1(&[1, 2, 3], &[1, 2, 3]).unwrap().weighted_f1, 1.0);
        assert_eq!(weighted_f1(&["B", "B"], &["A", "A"]).unwrap().weighted_f1, 0.0);
        assert_eq!(weighted_f1::<u8>(&[], &[]), Err(MetricError::Empty));
        assert!(weighted_f1(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn zero_support_class_has_no_weight() {
        let r = weighted_f1(&["A", "C"], &["A", "A"]).unwrap();
        assert_eq!(r.per_class["C"].support, 0);
        assert!((r.weighted_f1 - r.per_class["A"].f1).abs() < 1e-12);
    }

    #[test]
    fn kappa_cases() {
        assert_eq!(cohen_kappa(&['x', 'x', 'y', 'y'], &['y', 'y', 'x', 'x']).unwrap(), -1.0);
        assert_eq!(cohen_kappa(&[1, 2, 3, 1], &[1, 2, 3, 1]).unwrap(), 1.0);
        assert_eq!(cohen_kappa(&[4, 4], &[4, 4]).unwrap(), 1.0);
        assert!(cohen_kappa::<u8>(&[], &[]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a: Vec<u8> = (0..10_000).map(|_| rng.random_range(0..4)).collect();
        let b: Vec<u8> = (0..10_000).map(|_| rng.random_range(0..4)).collect();
        assert!(cohen_kappa(&a, &b).unwrap().abs() < 0.03);
    }

    #[test]
    fn hamming_cases() {
        assert_eq!(hamming_loss(&[1, 2, 3, 4], &[1, 2, 3, 4]).unwrap(), 0.0);
        assert_eq!(hamming_loss(&[1, 2], &[3, 4]).unwrap(), 1.0);
        assert_eq!(hamming_loss(&[1, 2, 3, 4], &[1, 2, 3, 5]).unwrap(), 0.25);
        assert!(hamming_loss::<u8>(&[], &[]).is_err());
    }

    #[test]
    fn parser_mode_cases() {
        let g = BBox::new(0.0, 0.0, 10.0, 10.0);
        let inst = |p: Option<BBox>, gold: Option<BBox>| ParserInstance { intent: KeyIntent::ComNm, predicted: p, gold };
        assert!(inst(Some(g), Some(g)).is_correct(0.5));
        assert!(!inst(Some(BBox::new(50.0, 50.0, 5.0, 5.0)), Some(g)).is_correct(0.5));
        // Overlap 100 of union 200 gives IoU exactly 0.5.
        let half = BBox::new(0.0, 0.0, 20.0, 10.0);
        assert_eq!(iou(&half, &g), 0.5);
        assert!(inst(Some(half), Some(g)).is_correct(0.5));
        assert!(inst(None, None).is_correct(0.5));
        assert!(!inst(None, Some(g)).is_correct(0.5));
        assert!(!inst(Some(g), None).is_correct(0.5));
        let r = parser_mode_accuracy(&[inst(Some(g), Some(g)), inst(None, Some(g))], 0.5);
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.per_intent["com_nm"], 0.5);
    }

    proptest! {
        #[test]
        fn f1_relabel_invariant(pairs in prop::collection::vec((0u8..4, 0u8..4), 1..60), shift in 1u8..4) {
            let (p, g): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
            let relabel = |x: &u8| (x + shift) % 4;
            let a = weighted_f1(&p, &g).unwrap().weighted_f1;
            let b = weighted_f1(&p.iter().map(relabel).collect::<Vec<_>>(), &g.iter().map(relabel).collect::<Vec<_>>()).unwrap().weighted_f1;
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn self_agreement(v in prop::collection::vec(0u8..5, 1..50)) {
            prop_assert_eq!(cohen_kappa(&v, &v).unwrap(), 1.0);
            prop_assert_eq!(hamming_loss(&v, &v).unwrap(), 0.0);
        }

        #[test]
        fn parser_accuracy_monotone_in_threshold(
            boxes in prop::collection::vec((0u32..50, 0u32..50, 1u32..40, 1u32..40, 0u32..50, 0u32..50, 1u32..40, 1u32..40), 1..30),
            t1 in 0.0f64..1.0, t2 in 0.0f64..1.0,
        ) {
            let inst: Vec<ParserInstance> = boxes.iter().map(|&(a, b, c, d, e, f, g, h)| ParserInstance {
                intent: KeyIntent::ComNm,
                predicted: Some(BBox::new(a as f64, b as f64, c as f64, d as f64)),
                gold: Some(BBox::new(e as f64, f as f64, g as f64, h as f64)),
            }).collect();
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(parser_mode_accuracy(&inst, hi).accuracy <= parser_mode_accuracy(&inst, lo).accuracy);
        }
    }
}
