//! Per-type query loop, span decoding, training, evaluation and ablations.

pub mod ablation;
pub mod eval;
pub mod optim;
pub mod records;
pub mod train;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_model::{MrcInstance, PredictionOutput, SpanAnnotation};
use crate::error::{Error, Result};
use crate::ingestion::{select_query, Document};
use crate::model::Checkpoint;
use crate::span_model::SpanStrategy;

pub use ablation::{ablate_data_fraction, ablate_loss, ablate_query_style, AblationData, AblationRow};
pub use eval::{evaluate, EvalReport, TypeScores};
pub use optim::AdamConfig;
pub use train::{train, EpochMetrics, TrainOutcome, TrainSettings};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    /// A per-token probability strictly above this marks a start (or end) candidate.
    pub threshold: f64,
    pub strategy: SpanStrategy,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            strategy: SpanStrategy::PerToken,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "decode threshold {} must lie in (0, 1)",
                self.threshold
            )));
        }
        Ok(())
    }
}

fn argmax(p: &[f64]) -> Option<usize> {
    // first maximum wins
    p.iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, &v)| match best {
            Some((_, b)) if v <= b => best,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i)
}

/// Picks at most one span from start/end probabilities.
///
/// Per-token: the smallest start candidate and the largest end candidate.
/// Position classifier: the argmax of each distribution. `None` when a
/// candidate set is empty or the chosen start lies after the chosen end.
pub fn decode_span(pred: &PredictionOutput, cfg: &DecodeConfig) -> Option<(usize, usize)> {
    let (start, end) = match cfg.strategy {
        SpanStrategy::PerToken => {
            let start = pred.p_start.iter().position(|&p| p > cfg.threshold)?;
            let end = pred.p_end.iter().rposition(|&p| p > cfg.threshold)?;
            (start, end)
        }
        SpanStrategy::PositionClassifier => (argmax(&pred.p_start)?, argmax(&pred.p_end)?),
    };
    (start <= end).then_some((start, end))
}

/// A decoded span with the probabilities at its boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredSpan {
    pub span: SpanAnnotation,
    pub p_start: f64,
    pub p_end: f64,
}

/// Asks one query per entity type and keeps every non-null answer, tagged
/// with that type. Spans of different types may overlap.
pub fn run_algorithm1_scored(doc: &Document, model: &Checkpoint, cfg: &DecodeConfig) -> Result<Vec<ScoredSpan>> {
    let mut out = Vec::new();
    for (type_id, name) in model.labels.names().iter().enumerate() {
        let query = model
            .tokenization
            .tokenize(select_query(&model.templates, name, model.query_style)?)?;
        let inst = MrcInstance::new(query, doc.sequence.clone(), &[], type_id)?;
        let pred = model.params.predict(&model.input_for(&inst)?)?;
        if let Some((start, end)) = decode_span(&pred, cfg) {
            out.push(ScoredSpan {
                span: SpanAnnotation { start, end, type_id },
                p_start: pred.p_start[start],
                p_end: pred.p_end[end],
            });
        }
    }
    Ok(out)
}

pub fn run_algorithm1(doc: &Document, model: &Checkpoint, cfg: &DecodeConfig) -> Result<Vec<SpanAnnotation>> {
    Ok(run_algorithm1_scored(doc, model, cfg)?.into_iter().map(|s| s.span).collect())
}

/// Runs [`run_algorithm1`] over a corpus in parallel, preserving document order.
pub fn predict_corpus(docs: &[Document], model: &Checkpoint, cfg: &DecodeConfig) -> Result<Vec<Vec<ScoredSpan>>> {
    docs.par_iter().map(|d| run_algorithm1_scored(d, model, cfg)).collect()
}
