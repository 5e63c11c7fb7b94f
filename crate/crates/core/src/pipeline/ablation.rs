//! Controlled comparisons: one model per condition, identical seed and
//! hyperparameters otherwise, each scored on the held-out split.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::EvalReport;
use super::train::{evaluate_model, stream_seed, train, EpochMetrics, TrainSettings};
use crate::data_model::{LabelSet, QueryStyle};
use crate::error::{Error, Result};
use crate::ingestion::{Document, QueryTemplateSet};
use crate::span_model::LossKind;

#[derive(Debug, Clone, Copy)]
pub struct AblationData<'a> {
    pub train: &'a [Document],
    pub dev: &'a [Document],
    /// Scored split.
    pub test: &'a [Document],
    pub labels: &'a LabelSet,
    pub templates: &'a QueryTemplateSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub condition: String,
    pub query_style: QueryStyle,
    pub loss_kind: LossKind,
    pub fraction: f64,
    pub seed: u64,
    pub best_epoch: usize,
    pub test: EvalReport,
    pub history: Vec<EpochMetrics>,
}

fn run_condition(
    data: &AblationData<'_>,
    train_docs: &[Document],
    condition: String,
    fraction: f64,
    settings: &TrainSettings,
    seed: u64,
) -> Result<AblationRow> {
    log::info!("ablation condition `{condition}` (seed {seed})");
    let outcome = train(train_docs, data.dev, data.labels, data.templates, settings, seed)?;
    let test = evaluate_model(data.test, &outcome.checkpoint, &settings.decode_config())?;
    Ok(AblationRow {
        condition,
        query_style: settings.query_style,
        loss_kind: settings.loss.kind,
        fraction,
        seed,
        best_epoch: outcome.best_epoch,
        test,
        history: outcome.history,
    })
}

/// One row per query style: index, pseudo, natural.
pub fn ablate_query_style(data: &AblationData<'_>, settings: &TrainSettings, seed: u64) -> Result<Vec<AblationRow>> {
    QueryStyle::ALL
        .iter()
        .map(|&style| {
            let s = TrainSettings {
                query_style: style,
                ..settings.clone()
            };
            run_condition(data, data.train, style.to_string(), 1.0, &s, seed)
        })
        .collect()
}

/// One row per objective: dice, cross-entropy.
pub fn ablate_loss(data: &AblationData<'_>, settings: &TrainSettings, seed: u64) -> Result<Vec<AblationRow>> {
    [LossKind::Dice, LossKind::CrossEntropy]
        .iter()
        .map(|&kind| {
            let mut s = settings.clone();
            s.loss.kind = kind;
            run_condition(data, data.train, kind.to_string(), 1.0, &s, seed)
        })
        .collect()
}

/// Deterministic subsample of `ceil(fraction · n)` documents, in corpus order.
/// A fraction of 1.0 returns the corpus unchanged.
pub fn subsample(docs: &[Document], fraction: f64, seed: u64) -> Result<Vec<Document>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!("fraction {fraction} outside (0, 1]")));
    }
    let k = ((fraction * docs.len() as f64).ceil() as usize).clamp(1.min(docs.len()), docs.len());
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, 3, fraction.to_bits(), 0));
    let mut picked = sample(&mut rng, docs.len(), k).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| docs[i].clone()).collect())
}

/// One row per training-data fraction.
pub fn ablate_data_fraction(
    data: &AblationData<'_>,
    settings: &TrainSettings,
    fractions: &[f64],
    seed: u64,
) -> Result<Vec<AblationRow>> {
    fractions
        .iter()
        .map(|&f| {
            let docs = subsample(data.train, f, seed)?;
            run_condition(data, &docs, format!("{f}"), f, settings, seed)
        })
        .collect()
}
