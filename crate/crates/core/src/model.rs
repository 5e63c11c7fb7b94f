//! Full model: encoder plus span heads, its training-time forward/backward,
//! and the checkpoint container.

use std::path::Path;

use ndarray::{s, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_model::{LabelSet, MrcInstance, PredictionOutput, QueryStyle};
use crate::encoder::{build_input, CombinedInput, EncoderConfig, EncoderParams, HiddenStates, Vocab};
use crate::error::{Error, Result};
use crate::ingestion::{QueryTemplateSet, Tokenization};
use crate::span_model::{self, instance_loss_grad, LossConfig, SpanHeadParams, SpanStrategy};

pub const SCHEMA_VERSION: u32 = 1;

/// Every trainable tensor of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub head: SpanHeadParams,
}

impl ModelParams {
    pub fn init(config: EncoderConfig, strategy: SpanStrategy, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = EncoderParams::init(config, &mut rng)?;
        let head = SpanHeadParams::init(strategy, config.d_model, &mut rng);
        Ok(Self { encoder, head })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            encoder: self.encoder.zeros_like(),
            head: self.head.zeros_like(),
        }
    }

    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut t = self.encoder.tensors();
        t.extend(self.head.tensors());
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.encoder.tensors_mut();
        t.extend(self.head.tensors_mut());
        t
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// `self += other`, tensor by tensor.
    pub fn add_assign(&mut self, other: &ModelParams) {
        for (dst, (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    /// Inference forward pass.
    pub fn predict(&self, input: &CombinedInput) -> Result<PredictionOutput> {
        let hidden = self.encoder.encode(input)?;
        Ok(span_model::predict(&self.head, &hidden, input.context_range()))
    }

    /// Loss for one instance and its gradient with respect to every parameter.
    /// `dropout_rng` enables training-mode dropout.
    pub fn loss_and_grad(
        &self,
        input: &CombinedInput,
        inst: &MrcInstance,
        loss: &LossConfig,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(f64, ModelParams)> {
        self.encoder.check_input(input)?;
        let (hidden, cache) = self.encoder.forward(input, dropout_rng);
        let hidden = HiddenStates(hidden);
        let ctx = input.context_range();
        let pred = span_model::predict(&self.head, &hidden, ctx.clone());
        let (value, dp_start, dp_end) = instance_loss_grad(&pred, inst, loss)?;
        let mut grads = self.zeros_like();
        let context = hidden.0.slice(s![ctx.clone(), ..]);
        let d_context = self.head.backward(context, &pred, &dp_start, &dp_end, &mut grads.head);
        let mut d_hidden = Array2::zeros(hidden.0.raw_dim());
        d_hidden.slice_mut(s![ctx, ..]).assign(&d_context);
        self.encoder.backward(&cache, &d_hidden, &mut grads.encoder);
        Ok((value, grads))
    }

    /// Loss only, with the same dropout behaviour as [`Self::loss_and_grad`].
    pub fn loss(
        &self,
        input: &CombinedInput,
        inst: &MrcInstance,
        loss: &LossConfig,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<f64> {
        self.encoder.check_input(input)?;
        let (hidden, _) = self.encoder.forward(input, dropout_rng);
        let pred = span_model::predict(&self.head, &HiddenStates(hidden), input.context_range());
        span_model::instance_loss(&pred, inst, loss)
    }
}

/// A trained model with everything needed to run it on new text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub labels: LabelSet,
    pub templates: QueryTemplateSet,
    pub query_style: QueryStyle,
    pub tokenization: Tokenization,
    pub vocab: Vocab,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn encoder_config(&self) -> &EncoderConfig {
        &self.params.encoder.config
    }

    pub fn input_for(&self, inst: &MrcInstance) -> Result<CombinedInput> {
        build_input(&inst.query, &inst.context, &self.vocab, self.encoder_config().max_len)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Header {
            schema_version: u32,
        }
        let header: Header = serde_json::from_str(text)?;
        if header.schema_version != SCHEMA_VERSION {
            return Err(Error::SchemaMismatch {
                found: header.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        if !ckpt.params.is_finite() {
            return Err(Error::InvalidConfig("checkpoint contains non-finite parameters".into()));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
