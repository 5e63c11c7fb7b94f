//! Exact-match, micro-averaged span precision / recall / F1.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::data_model::{LabelSet, SpanAnnotation};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TypeScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl TypeScores {
    pub fn from_counts(true_positives: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(true_positives, predicted);
        let recall = ratio(true_positives, gold);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
            true_positives,
            predicted,
            gold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub predicted: usize,
    pub gold: usize,
    pub per_type: BTreeMap<String, TypeScores>,
}

impl EvalReport {
    pub fn micro(&self) -> TypeScores {
        TypeScores {
            precision: self.precision,
            recall: self.recall,
            f1: self.f1,
            true_positives: self.true_positives,
            predicted: self.predicted,
            gold: self.gold,
        }
    }
}

/// Scores `predicted` against `gold`. Both map document id → spans and must
/// cover the same ids. Duplicate predictions count once.
pub fn evaluate(
    predicted: &BTreeMap<String, Vec<SpanAnnotation>>,
    gold: &BTreeMap<String, Vec<SpanAnnotation>>,
    labels: &LabelSet,
) -> Result<EvalReport> {
    if let Some(id) = predicted.keys().find(|k| !gold.contains_key(*k)) {
        return Err(Error::DocIdMismatch(id.clone()));
    }
    if let Some(id) = gold.keys().find(|k| !predicted.contains_key(*k)) {
        return Err(Error::DocIdMismatch(id.clone()));
    }
    let k = labels.len();
    let (mut tp, mut np, mut ng) = (vec![0usize; k], vec![0usize; k], vec![0usize; k]);
    for (id, gold_spans) in gold {
        let gold_set: HashSet<_> = gold_spans.iter().copied().collect();
        let pred_set: HashSet<_> = predicted[id].iter().copied().collect();
        for s in &gold_set {
            ng[s.type_id] += 1;
        }
        for s in &pred_set {
            np[s.type_id] += 1;
            if gold_set.contains(s) {
                tp[s.type_id] += 1;
            }
        }
    }
    let micro = TypeScores::from_counts(tp.iter().sum(), np.iter().sum(), ng.iter().sum());
    let per_type = labels
        .names()
        .iter()
        .enumerate()
        .map(|(i, name)| (name.clone(), TypeScores::from_counts(tp[i], np[i], ng[i])))
        .collect();
    Ok(EvalReport {
        precision: micro.precision,
        recall: micro.recall,
        f1: micro.f1,
        true_positives: micro.true_positives,
        predicted: micro.predicted,
        gold: micro.gold,
        per_type,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn span(start: usize, end: usize, type_id: usize) -> SpanAnnotation {
        SpanAnnotation { start, end, type_id }
    }

    fn labels() -> LabelSet {
        LabelSet::new(["PER", "LOC"]).unwrap()
    }

    fn corpus(spans: Vec<SpanAnnotation>) -> BTreeMap<String, Vec<SpanAnnotation>> {
        BTreeMap::from([("d0".to_string(), spans)])
    }

    #[test]
    fn identity_scores_one() {
        let g = corpus(vec![span(0, 1, 0), span(3, 4, 1)]);
        let r = evaluate(&g, &g, &labels()).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn empty_predictions_score_zero() {
        let g = corpus(vec![span(0, 1, 0)]);
        let r = evaluate(&corpus(vec![]), &g, &labels()).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn hand_counted_example() {
        let g = corpus(vec![span(0, 1, 0), span(3, 4, 1)]);
        let p = corpus(vec![span(0, 1, 0)]);
        let r = evaluate(&p, &g, &labels()).unwrap();
        assert_eq!(r.precision, 1.0);
        assert_eq!(r.recall, 0.5);
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.per_type["PER"].f1, 1.0);
        assert_eq!(r.per_type["LOC"].recall, 0.0);
    }

    #[test]
    fn type_must_match() {
        let g = corpus(vec![span(0, 1, 0)]);
        let p = corpus(vec![span(0, 1, 1)]);
        assert_eq!(evaluate(&p, &g, &labels()).unwrap().true_positives, 0);
    }

    #[test]
    fn doc_ids_must_agree() {
        let g = corpus(vec![]);
        let p = BTreeMap::from([("other".to_string(), vec![])]);
        assert!(matches!(evaluate(&p, &g, &labels()), Err(Error::DocIdMismatch(id)) if id == "other"));
    }
}
