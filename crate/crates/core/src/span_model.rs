//! Start/end span heads over the context hidden states, and the dice and
//! cross-entropy objectives with their analytic gradients.

use std::ops::Range;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data_model::{MrcInstance, PredictionOutput};
use crate::encoder::layers::softmax;
use crate::encoder::{slice1, slice1_mut, HiddenStates};
use crate::error::{Error, Result};

/// Probability clamp used by the cross-entropy objective.
pub const CE_EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanStrategy {
    /// Independent binary start and end decisions for every context token.
    #[default]
    PerToken,
    /// One distribution over context positions for the start, one for the end.
    PositionClassifier,
}

impl std::str::FromStr for SpanStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_token" => Ok(SpanStrategy::PerToken),
            "position_classifier" => Ok(SpanStrategy::PositionClassifier),
            other => Err(Error::InvalidConfig(format!("unknown span strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanHeadParams {
    pub strategy: SpanStrategy,
    pub w_start: Array1<f64>,
    pub b_start: f64,
    pub w_end: Array1<f64>,
    pub b_end: f64,
}

impl SpanHeadParams {
    pub fn zeros(strategy: SpanStrategy, d: usize) -> Self {
        Self {
            strategy,
            w_start: Array1::zeros(d),
            b_start: 0.0,
            w_end: Array1::zeros(d),
            b_end: 0.0,
        }
    }

    pub fn init(strategy: SpanStrategy, d: usize, rng: &mut ChaCha8Rng) -> Self {
        let dist = Normal::new(0.0, 0.02).expect("valid std");
        let mut p = Self::zeros(strategy, d);
        p.w_start.mapv_inplace(|_| dist.sample(rng));
        p.w_end.mapv_inplace(|_| dist.sample(rng));
        p
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.strategy, self.w_start.len())
    }

    pub fn dim(&self) -> usize {
        self.w_start.len()
    }

    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        vec![
            ("head.w_start".into(), slice1(&self.w_start)),
            ("head.b_start".into(), std::slice::from_ref(&self.b_start)),
            ("head.w_end".into(), slice1(&self.w_end)),
            ("head.b_end".into(), std::slice::from_ref(&self.b_end)),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            slice1_mut(&mut self.w_start),
            std::slice::from_mut(&mut self.b_start),
            slice1_mut(&mut self.w_end),
            std::slice::from_mut(&mut self.b_end),
        ]
    }

    fn activate(&self, logits: Array1<f64>) -> Vec<f64> {
        match self.strategy {
            SpanStrategy::PerToken => logits.iter().map(|&z| sigmoid(z)).collect(),
            SpanStrategy::PositionClassifier => softmax(logits.view()).to_vec(),
        }
    }

    fn forward(&self, context: ArrayView2<f64>) -> PredictionOutput {
        let start = context.dot(&self.w_start) + self.b_start;
        let end = context.dot(&self.w_end) + self.b_end;
        PredictionOutput {
            p_start: self.activate(start),
            p_end: self.activate(end),
        }
    }

    /// Chain rule from `dL/dp` back to the pre-activation scores.
    fn activation_backward(&self, p: &[f64], dp: &[f64]) -> Array1<f64> {
        match self.strategy {
            SpanStrategy::PerToken => p.iter().zip(dp).map(|(&p, &g)| g * p * (1.0 - p)).collect(),
            SpanStrategy::PositionClassifier => {
                let dot: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
                p.iter().zip(dp).map(|(&p, &g)| p * (g - dot)).collect()
            }
        }
    }

    /// Accumulates head gradients into `grads` and returns `dL/d(context rows)`.
    pub(crate) fn backward(
        &self,
        context: ArrayView2<f64>,
        pred: &PredictionOutput,
        dp_start: &[f64],
        dp_end: &[f64],
        grads: &mut SpanHeadParams,
    ) -> Array2<f64> {
        let dz_start = self.activation_backward(&pred.p_start, dp_start);
        let dz_end = self.activation_backward(&pred.p_end, dp_end);
        grads.w_start += &context.t().dot(&dz_start);
        grads.b_start += dz_start.sum();
        grads.w_end += &context.t().dot(&dz_end);
        grads.b_end += dz_end.sum();
        let mut d_context = outer(&dz_start, &self.w_start);
        d_context += &outer(&dz_end, &self.w_end);
        d_context
    }
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let a2 = a.view().insert_axis(Axis(1));
    let b2 = b.view().insert_axis(Axis(0));
    a2.dot(&b2)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Start/end probabilities for the context positions `context` of `hidden`.
pub fn predict(head: &SpanHeadParams, hidden: &HiddenStates, context: Range<usize>) -> PredictionOutput {
    head.forward(hidden.0.slice(ndarray::s![context, ..]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Dice,
    CrossEntropy,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Dice => "dice",
            LossKind::CrossEntropy => "cross_entropy",
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dice" => Ok(LossKind::Dice),
            "cross_entropy" | "ce" => Ok(LossKind::CrossEntropy),
            other => Err(Error::InvalidConfig(format!("unknown loss kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Dice smoothing term; ignored for cross-entropy.
    pub lambda: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            kind: LossKind::Dice,
            lambda: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda {} must be >= 0", self.lambda)));
        }
        Ok(())
    }
}

fn check_lengths(p: &[f64], g: &[f64]) -> Result<()> {
    if p.len() != g.len() {
        return Err(Error::LengthMismatch(p.len(), g.len()));
    }
    Ok(())
}

/// `(2·Σ p·g, Σ p² + Σ g² + λ)`.
fn dice_terms(p: &[f64], g: &[f64], lambda: f64) -> Result<(f64, f64)> {
    check_lengths(p, g)?;
    let (mut inter, mut denom) = (0.0, lambda);
    for (&pi, &gi) in p.iter().zip(g) {
        inter += pi * gi;
        denom += pi * pi + gi * gi;
    }
    if denom == 0.0 {
        return Err(Error::DegenerateInput);
    }
    Ok((2.0 * inter, denom))
}

/// `1 − (2·Σ p·g + λ) / (Σ p² + Σ g² + λ)`.
pub fn dice_loss(p: &[f64], g: &[f64], lambda: f64) -> Result<f64> {
    let (inter2, denom) = dice_terms(p, g, lambda)?;
    Ok(1.0 - (inter2 + lambda) / denom)
}

/// Splits `1 − dice_loss` into a recall-like term `2·Σ p·g / D` (unaffected by
/// predictions on negatives except through `D`) and a precision-like term
/// `λ / D` that shrinks as false-positive mass grows.
pub fn dice_decomposition(p: &[f64], g: &[f64], lambda: f64) -> Result<(f64, f64)> {
    let (inter2, denom) = dice_terms(p, g, lambda)?;
    Ok((inter2 / denom, lambda / denom))
}

/// `∂L/∂p_i = −(2·g_i·D − 2·p_i·N) / D²` with `N = 2·Σ p·g + λ`.
pub fn dice_grad(p: &[f64], g: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let (inter2, denom) = dice_terms(p, g, lambda)?;
    let num = inter2 + lambda;
    let d2 = denom * denom;
    Ok(p.iter()
        .zip(g)
        .map(|(&pi, &gi)| -(2.0 * gi * denom - 2.0 * pi * num) / d2)
        .collect())
}

fn clamp_p(p: f64) -> f64 {
    p.clamp(CE_EPSILON, 1.0 - CE_EPSILON)
}

/// Mean binary cross-entropy with probabilities clamped to `[ε, 1 − ε]`.
pub fn cross_entropy_loss(p: &[f64], g: &[f64]) -> Result<f64> {
    check_lengths(p, g)?;
    if p.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = p
        .iter()
        .zip(g)
        .map(|(&pi, &gi)| {
            let pc = clamp_p(pi);
            -(gi * pc.ln() + (1.0 - gi) * (1.0 - pc).ln())
        })
        .sum();
    Ok(total / p.len() as f64)
}

/// Gradient of [`cross_entropy_loss`]; zero where the clamp is active.
pub fn cross_entropy_grad(p: &[f64], g: &[f64]) -> Result<Vec<f64>> {
    check_lengths(p, g)?;
    let n = p.len() as f64;
    Ok(p.iter()
        .zip(g)
        .map(|(&pi, &gi)| {
            if !(CE_EPSILON..=1.0 - CE_EPSILON).contains(&pi) {
                return 0.0;
            }
            -(gi / pi - (1.0 - gi) / (1.0 - pi)) / n
        })
        .collect())
}

fn vector_loss(p: &[f64], g: &[f64], cfg: &LossConfig) -> Result<f64> {
    match cfg.kind {
        LossKind::Dice => dice_loss(p, g, cfg.lambda),
        LossKind::CrossEntropy => cross_entropy_loss(p, g),
    }
}

fn vector_grad(p: &[f64], g: &[f64], cfg: &LossConfig) -> Result<Vec<f64>> {
    match cfg.kind {
        LossKind::Dice => dice_grad(p, g, cfg.lambda),
        LossKind::CrossEntropy => cross_entropy_grad(p, g),
    }
}

/// Start loss plus end loss.
pub fn instance_loss(pred: &PredictionOutput, inst: &MrcInstance, cfg: &LossConfig) -> Result<f64> {
    Ok(vector_loss(&pred.p_start, &inst.gold_start(), cfg)? + vector_loss(&pred.p_end, &inst.gold_end(), cfg)?)
}

/// [`instance_loss`] together with its gradients with respect to `p_start` and `p_end`.
pub fn instance_loss_grad(
    pred: &PredictionOutput,
    inst: &MrcInstance,
    cfg: &LossConfig,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let (gs, ge) = (inst.gold_start(), inst.gold_end());
    let loss = vector_loss(&pred.p_start, &gs, cfg)? + vector_loss(&pred.p_end, &ge, cfg)?;
    Ok((loss, vector_grad(&pred.p_start, &gs, cfg)?, vector_grad(&pred.p_end, &ge, cfg)?))
}
