//! Line-delimited JSON records for metrics and predictions.
//!
//! Prediction records carry 1-based inclusive indices.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ScoredSpan;
use crate::data_model::{LabelSet, SpanAnnotation};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub epoch: usize,
    pub split: String,
    #[serde(rename = "P")]
    pub precision: f64,
    #[serde(rename = "R")]
    pub recall: f64,
    #[serde(rename = "F")]
    pub f1: f64,
    pub loss_kind: String,
    pub query_style: String,
    pub fraction: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictedSpanRecord {
    pub start: usize,
    pub end: usize,
    #[serde(rename = "type")]
    pub type_name: String,
    pub p_start: f64,
    pub p_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub doc_id: String,
    pub spans: Vec<PredictedSpanRecord>,
}

impl PredictionRecord {
    pub fn new(doc_id: impl Into<String>, spans: &[ScoredSpan], labels: &LabelSet) -> Self {
        Self {
            doc_id: doc_id.into(),
            spans: spans
                .iter()
                .map(|s| {
                    let (start, end) = s.span.to_one_based();
                    PredictedSpanRecord {
                        start,
                        end,
                        type_name: labels.name(s.span.type_id).to_string(),
                        p_start: s.p_start,
                        p_end: s.p_end,
                    }
                })
                .collect(),
        }
    }
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn from_jsonl<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::MalformedLine {
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Reads prediction records back into 0-based spans keyed by document id.
pub fn parse_predictions(text: &str, labels: &LabelSet) -> Result<BTreeMap<String, Vec<SpanAnnotation>>> {
    let mut out: BTreeMap<String, Vec<SpanAnnotation>> = BTreeMap::new();
    for (i, rec) in from_jsonl::<PredictionRecord>(text)?.into_iter().enumerate() {
        let spans = out.entry(rec.doc_id).or_default();
        for s in rec.spans {
            let type_id = labels.id_of(&s.type_name).ok_or_else(|| Error::UnknownType {
                line: i + 1,
                name: s.type_name.clone(),
            })?;
            if s.start == 0 || s.start > s.end {
                return Err(Error::MalformedLine {
                    line: i + 1,
                    reason: format!("invalid 1-based span ({}, {})", s.start, s.end),
                });
            }
            spans.push(SpanAnnotation {
                start: s.start - 1,
                end: s.end - 1,
                type_id,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serialized_indices_are_one_based() {
        let labels = LabelSet::new(["PER", "ORG"]).unwrap();
        let spans = [ScoredSpan {
            span: SpanAnnotation { start: 2, end: 4, type_id: 1 },
            p_start: 0.9,
            p_end: 0.8,
        }];
        let rec = PredictionRecord::new("d7", &spans, &labels);
        assert_eq!((rec.spans[0].start, rec.spans[0].end), (3, 5));
        let text = to_jsonl(&[rec]).unwrap();
        assert!(text.contains(r#""type":"ORG""#));
        let back = parse_predictions(&text, &labels).unwrap();
        assert_eq!(back["d7"], vec![spans[0].span]);
    }

    #[test]
    fn metrics_field_names() {
        let rec = MetricsRecord {
            run_id: "r".into(),
            epoch: 1,
            split: "dev".into(),
            precision: 0.5,
            recall: 0.25,
            f1: 0.3,
            loss_kind: "dice".into(),
            query_style: "natural".into(),
            fraction: 1.0,
            seed: 7,
            train_loss: None,
        };
        let v: serde_json::Value = serde_json::from_str(&serde_json::to_string(&rec).unwrap()).unwrap();
        for key in ["run_id", "epoch", "split", "P", "R", "F", "loss_kind", "query_style", "fraction", "seed"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn zero_index_rejected() {
        let labels = LabelSet::new(["PER"]).unwrap();
        let text = r#"{"doc_id":"a","spans":[{"start":0,"end":1,"type":"PER","p_start":1.0,"p_end":1.0}]}"#;
        assert!(parse_predictions(text, &labels).is_err());
    }
}
