//! Mini-batch training with per-epoch dev selection.
//!
//! Every random draw (initialization, shuffling, dropout) comes from ChaCha
//! streams derived from the run seed, and per-instance gradients are summed in
//! batch order, so a run is bitwise reproducible regardless of thread count.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::eval::{evaluate, EvalReport, TypeScores};
use super::optim::{Adam, AdamConfig};
use super::{predict_corpus, DecodeConfig};
use crate::data_model::{LabelSet, MrcInstance, QueryStyle};
use crate::encoder::{build_input, CombinedInput, EncoderConfig, Vocab};
use crate::error::{Error, Result};
use crate::ingestion::{build_instances, Document, QueryTemplateSet, Tokenization};
use crate::model::{Checkpoint, ModelParams, SCHEMA_VERSION};
use crate::span_model::{LossConfig, SpanStrategy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub strategy: SpanStrategy,
    pub query_style: QueryStyle,
    pub tokenization: Tokenization,
    pub loss: LossConfig,
    pub threshold: f64,
    pub optimizer: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Stop after this many epochs without a dev F1 improvement.
    pub patience: Option<usize>,
    /// Stop as soon as dev F1 reaches this value.
    pub target_dev_f1: Option<f64>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            max_len: 512,
            dropout: 0.1,
            strategy: SpanStrategy::PerToken,
            query_style: QueryStyle::Natural,
            tokenization: Tokenization::Word,
            loss: LossConfig::default(),
            threshold: 0.5,
            optimizer: AdamConfig::default(),
            epochs: 30,
            batch_size: 16,
            patience: None,
            target_dev_f1: None,
        }
    }
}

impl TrainSettings {
    pub fn encoder_config(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            d_ff: self.d_ff,
            max_len: self.max_len,
            dropout: self.dropout,
        }
    }

    pub fn decode_config(&self) -> DecodeConfig {
        DecodeConfig {
            threshold: self.threshold,
            strategy: self.strategy,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder_config(4).validate()?;
        self.loss.validate()?;
        self.decode_config().validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch_size must be positive".into()));
        }
        if !(self.optimizer.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub dev: TypeScores,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best dev F1 (earliest on ties).
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub best_dev: EvalReport,
}

fn mix(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the combined words
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn stream_seed(seed: u64, tag: u64, a: u64, b: u64) -> u64 {
    mix(mix(mix(seed, tag), a), b)
}

pub(crate) fn gold_map(docs: &[Document]) -> BTreeMap<String, Vec<crate::data_model::SpanAnnotation>> {
    docs.iter().map(|d| (d.doc_id.clone(), d.gold_spans.clone())).collect()
}

/// Runs the full query loop on `docs` and scores it.
pub fn evaluate_model(docs: &[Document], model: &Checkpoint, decode: &DecodeConfig) -> Result<EvalReport> {
    let predicted = predict_corpus(docs, model, decode)?;
    let predicted = docs
        .iter()
        .zip(predicted)
        .map(|(d, spans)| (d.doc_id.clone(), spans.into_iter().map(|s| s.span).collect()))
        .collect();
    evaluate(&predicted, &gold_map(docs), &model.labels)
}

pub fn train(
    train_docs: &[Document],
    dev_docs: &[Document],
    labels: &LabelSet,
    templates: &QueryTemplateSet,
    settings: &TrainSettings,
    seed: u64,
) -> Result<TrainOutcome> {
    settings.validate()?;
    if train_docs.is_empty() {
        return Err(Error::InvalidConfig("training split is empty".into()));
    }
    if dev_docs.is_empty() {
        return Err(Error::InvalidConfig("dev split is empty".into()));
    }
    templates.check_covers(labels)?;

    let vocab = Vocab::build(train_docs, templates, settings.tokenization)?;
    let enc_cfg = settings.encoder_config(vocab.len());
    let params = ModelParams::init(enc_cfg, settings.strategy, seed)?;

    let instances: Vec<MrcInstance> = train_docs
        .iter()
        .map(|d| build_instances(d, labels, templates, settings.query_style, settings.tokenization))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let inputs: Vec<CombinedInput> = instances
        .iter()
        .map(|i| build_input(&i.query, &i.context, &vocab, enc_cfg.max_len))
        .collect::<Result<_>>()?;

    let mut model = Checkpoint {
        schema_version: SCHEMA_VERSION,
        labels: labels.clone(),
        templates: templates.clone(),
        query_style: settings.query_style,
        tokenization: settings.tokenization,
        vocab,
        params,
    };
    let decode = settings.decode_config();
    let mut opt = Adam::new(settings.optimizer, &model.params);
    let mut order: Vec<usize> = (0..instances.len()).collect();
    let mut history = Vec::with_capacity(settings.epochs);
    let mut best: Option<(usize, EvalReport, ModelParams)> = None;
    let use_dropout = settings.dropout > 0.0;

    log::info!(
        "training on {} instances ({} docs x {} types), {} parameters",
        instances.len(),
        train_docs.len(),
        labels.len(),
        model.params.num_params()
    );

    for epoch in 1..=settings.epochs {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, 1, epoch as u64, 0));
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for (batch_idx, batch) in order.chunks(settings.batch_size).enumerate() {
            let params = &model.params;
            let results: Vec<Result<(f64, ModelParams)>> = batch
                .par_iter()
                .map(|&i| {
                    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, 2, epoch as u64, i as u64));
                    params.loss_and_grad(
                        &inputs[i],
                        &instances[i],
                        &settings.loss,
                        use_dropout.then_some(&mut rng),
                    )
                })
                .collect();
            let mut total = params.zeros_like();
            let mut batch_loss = 0.0;
            for r in results {
                let (loss, grads) = r?;
                batch_loss += loss;
                total.add_assign(&grads);
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            total.scale(1.0 / batch.len() as f64);
            opt.step(&mut model.params, &total);
            if !model.params.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            epoch_loss += batch_loss;
        }
        let train_loss = epoch_loss / instances.len() as f64;
        let dev = evaluate_model(dev_docs, &model, &decode)?;
        log::info!(
            "epoch {epoch}: train loss {train_loss:.5}, dev P {:.4} R {:.4} F {:.4}",
            dev.precision,
            dev.recall,
            dev.f1
        );
        history.push(EpochMetrics {
            epoch,
            train_loss,
            dev: dev.micro(),
        });
        let improved = best.as_ref().is_none_or(|(_, b, _)| dev.f1 > b.f1);
        if improved {
            best = Some((epoch, dev, model.params.clone()));
        }
        let (best_epoch, best_report, _) = best.as_ref().expect("set on first epoch");
        if settings.target_dev_f1.is_some_and(|t| best_report.f1 >= t) {
            break;
        }
        if settings.patience.is_some_and(|p| epoch - best_epoch >= p) {
            break;
        }
    }

    let (best_epoch, best_dev, best_params) = best.expect("at least one epoch");
    model.params = best_params;
    Ok(TrainOutcome {
        checkpoint: model,
        history,
        best_epoch,
        best_dev,
    })
}
