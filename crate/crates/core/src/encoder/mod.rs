//! Combined query/context input construction and a small pre-layer-norm
//! transformer encoder with a hand-written backward pass.
//!
//! The input layout is `[CLS] query [SEP] context [SEP]`. Segment id 0 covers
//! `[CLS]`, the query and the first `[SEP]`; segment id 1 covers the context
//! and the final `[SEP]`.

pub mod layers;
pub mod vocab;

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data_model::TokenSequence;
use crate::error::{Error, Result};
use layers::{
    gelu, gelu_backward, layer_norm, layer_norm_backward, linear, linear_backward, softmax_rows,
    softmax_rows_backward, LayerNormCache,
};
pub use vocab::{Vocab, CLS_ID, PAD_ID, SEP_ID, UNK_ID};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CombinedInput {
    pub token_ids: Vec<usize>,
    pub segment_ids: Vec<u8>,
    /// Index of the first context token.
    pub context_offset: usize,
    pub context_len: usize,
}

impl CombinedInput {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn context_range(&self) -> std::ops::Range<usize> {
        self.context_offset..self.context_offset + self.context_len
    }

    pub fn context_ids(&self) -> &[usize] {
        &self.token_ids[self.context_range()]
    }
}

pub fn build_input(
    query: &TokenSequence,
    context: &TokenSequence,
    vocab: &Vocab,
    max_len: usize,
) -> Result<CombinedInput> {
    let (nq, n) = (query.len(), context.len());
    let m = nq + n + 3;
    if m > max_len {
        return Err(Error::SequenceTooLong { len: m, max: max_len });
    }
    let mut token_ids = Vec::with_capacity(m);
    token_ids.push(CLS_ID);
    token_ids.extend(vocab.ids(query));
    token_ids.push(SEP_ID);
    token_ids.extend(vocab.ids(context));
    token_ids.push(SEP_ID);
    let mut segment_ids = vec![0u8; nq + 2];
    segment_ids.resize(m, 1);
    Ok(CombinedInput {
        token_ids,
        segment_ids,
        context_offset: nq + 2,
        context_len: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub dropout: f64,
}

impl EncoderConfig {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            max_len: 512,
            dropout: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return bad(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.vocab_size < 4 || self.max_len < 5 || self.d_ff == 0 {
            return bad("vocab_size >= 4, max_len >= 5 and d_ff > 0 are required".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub ln1_gamma: Array1<f64>,
    pub ln1_beta: Array1<f64>,
    pub w_q: Array2<f64>,
    pub b_q: Array1<f64>,
    pub w_k: Array2<f64>,
    pub b_k: Array1<f64>,
    pub w_v: Array2<f64>,
    pub b_v: Array1<f64>,
    pub w_o: Array2<f64>,
    pub b_o: Array1<f64>,
    pub ln2_gamma: Array1<f64>,
    pub ln2_beta: Array1<f64>,
    pub w_ff1: Array2<f64>,
    pub b_ff1: Array1<f64>,
    pub w_ff2: Array2<f64>,
    pub b_ff2: Array1<f64>,
}

impl LayerParams {
    fn zeros(d: usize, d_ff: usize) -> Self {
        Self {
            ln1_gamma: Array1::zeros(d),
            ln1_beta: Array1::zeros(d),
            w_q: Array2::zeros((d, d)),
            b_q: Array1::zeros(d),
            w_k: Array2::zeros((d, d)),
            b_k: Array1::zeros(d),
            w_v: Array2::zeros((d, d)),
            b_v: Array1::zeros(d),
            w_o: Array2::zeros((d, d)),
            b_o: Array1::zeros(d),
            ln2_gamma: Array1::zeros(d),
            ln2_beta: Array1::zeros(d),
            w_ff1: Array2::zeros((d, d_ff)),
            b_ff1: Array1::zeros(d_ff),
            w_ff2: Array2::zeros((d_ff, d)),
            b_ff2: Array1::zeros(d),
        }
    }

    fn tensors(&self) -> [(&'static str, &[f64]); 16] {
        [
            ("ln1_gamma", slice1(&self.ln1_gamma)),
            ("ln1_beta", slice1(&self.ln1_beta)),
            ("w_q", slice2(&self.w_q)),
            ("b_q", slice1(&self.b_q)),
            ("w_k", slice2(&self.w_k)),
            ("b_k", slice1(&self.b_k)),
            ("w_v", slice2(&self.w_v)),
            ("b_v", slice1(&self.b_v)),
            ("w_o", slice2(&self.w_o)),
            ("b_o", slice1(&self.b_o)),
            ("ln2_gamma", slice1(&self.ln2_gamma)),
            ("ln2_beta", slice1(&self.ln2_beta)),
            ("w_ff1", slice2(&self.w_ff1)),
            ("b_ff1", slice1(&self.b_ff1)),
            ("w_ff2", slice2(&self.w_ff2)),
            ("b_ff2", slice1(&self.b_ff2)),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 16] {
        [
            slice1_mut(&mut self.ln1_gamma),
            slice1_mut(&mut self.ln1_beta),
            slice2_mut(&mut self.w_q),
            slice1_mut(&mut self.b_q),
            slice2_mut(&mut self.w_k),
            slice1_mut(&mut self.b_k),
            slice2_mut(&mut self.w_v),
            slice1_mut(&mut self.b_v),
            slice2_mut(&mut self.w_o),
            slice1_mut(&mut self.b_o),
            slice1_mut(&mut self.ln2_gamma),
            slice1_mut(&mut self.ln2_beta),
            slice2_mut(&mut self.w_ff1),
            slice1_mut(&mut self.b_ff1),
            slice2_mut(&mut self.w_ff2),
            slice1_mut(&mut self.b_ff2),
        ]
    }
}

pub(crate) fn slice1(a: &Array1<f64>) -> &[f64] {
    a.as_slice().expect("parameter tensors are contiguous")
}

pub(crate) fn slice2(a: &Array2<f64>) -> &[f64] {
    a.as_slice().expect("parameter tensors are contiguous")
}

pub(crate) fn slice1_mut(a: &mut Array1<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("parameter tensors are contiguous")
}

pub(crate) fn slice2_mut(a: &mut Array2<f64>) -> &mut [f64] {
    a.as_slice_mut().expect("parameter tensors are contiguous")
}

/// All trainable encoder tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub token_embedding: Array2<f64>,
    pub position_embedding: Array2<f64>,
    pub segment_embedding: Array2<f64>,
    pub layers: Vec<LayerParams>,
    pub final_ln_gamma: Array1<f64>,
    pub final_ln_beta: Array1<f64>,
}

/// Row-major `m × d` encoder output, one row per combined-input position.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates(pub Array2<f64>);

impl HiddenStates {
    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }
}

struct LayerCache {
    ln1: LayerNormCache,
    h1: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Per-head attention probabilities, each `m × m`.
    attn: Vec<Array2<f64>>,
    ctx: Array2<f64>,
    mask1: Option<Array2<f64>>,
    ln2: LayerNormCache,
    h2: Array2<f64>,
    ff_pre: Array2<f64>,
    ff_act: Array2<f64>,
    mask2: Option<Array2<f64>>,
}

pub(crate) struct EncoderCache {
    token_ids: Vec<usize>,
    segment_ids: Vec<u8>,
    layers: Vec<LayerCache>,
    final_ln: LayerNormCache,
}

fn dropout_mask(rng: &mut ChaCha8Rng, shape: (usize, usize), p: f64) -> Array2<f64> {
    let keep = 1.0 / (1.0 - p);
    Array2::from_shape_fn(shape, |_| if rng.random::<f64>() < p { 0.0 } else { keep })
}

impl EncoderParams {
    pub fn zeros(config: EncoderConfig) -> Self {
        let d = config.d_model;
        Self {
            config,
            token_embedding: Array2::zeros((config.vocab_size, d)),
            position_embedding: Array2::zeros((config.max_len, d)),
            segment_embedding: Array2::zeros((2, d)),
            layers: (0..config.n_layers).map(|_| LayerParams::zeros(d, config.d_ff)).collect(),
            final_ln_gamma: Array1::zeros(d),
            final_ln_beta: Array1::zeros(d),
        }
    }

    /// Embeddings ~ N(0, 0.02²), projections ~ N(0, 2/(fan_in + fan_out)),
    /// layer-norm scales 1, all biases 0.
    pub fn init(config: EncoderConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let mut p = Self::zeros(config);
        let emb = Normal::new(0.0, 0.02).expect("valid std");
        for t in [&mut p.token_embedding, &mut p.position_embedding, &mut p.segment_embedding] {
            t.mapv_inplace(|_| emb.sample(rng));
        }
        let xavier = |w: &mut Array2<f64>, rng: &mut ChaCha8Rng| {
            let std = (2.0 / (w.nrows() + w.ncols()) as f64).sqrt();
            let dist = Normal::new(0.0, std).expect("valid std");
            w.mapv_inplace(|_| dist.sample(rng));
        };
        for layer in &mut p.layers {
            layer.ln1_gamma.fill(1.0);
            layer.ln2_gamma.fill(1.0);
            for w in [
                &mut layer.w_q,
                &mut layer.w_k,
                &mut layer.w_v,
                &mut layer.w_o,
                &mut layer.w_ff1,
                &mut layer.w_ff2,
            ] {
                xavier(w, rng);
            }
        }
        p.final_ln_gamma.fill(1.0);
        Ok(p)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.config)
    }

    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = vec![
            ("token_embedding".to_string(), slice2(&self.token_embedding)),
            ("position_embedding".to_string(), slice2(&self.position_embedding)),
            ("segment_embedding".to_string(), slice2(&self.segment_embedding)),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            out.extend(layer.tensors().into_iter().map(|(n, t)| (format!("layer{i}.{n}"), t)));
        }
        out.push(("final_ln_gamma".to_string(), slice1(&self.final_ln_gamma)));
        out.push(("final_ln_beta".to_string(), slice1(&self.final_ln_beta)));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![
            slice2_mut(&mut self.token_embedding),
            slice2_mut(&mut self.position_embedding),
            slice2_mut(&mut self.segment_embedding),
        ];
        for layer in &mut self.layers {
            out.extend(layer.tensors_mut());
        }
        out.push(slice1_mut(&mut self.final_ln_gamma));
        out.push(slice1_mut(&mut self.final_ln_beta));
        out
    }

    pub fn check_input(&self, input: &CombinedInput) -> Result<()> {
        if input.len() > self.config.max_len {
            return Err(Error::SequenceTooLong {
                len: input.len(),
                max: self.config.max_len,
            });
        }
        if let Some(&bad) = input.token_ids.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(Error::InvalidConfig(format!(
                "token id {bad} outside vocabulary of size {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    /// Inference-mode forward pass: no dropout, deterministic.
    pub fn encode(&self, input: &CombinedInput) -> Result<HiddenStates> {
        self.check_input(input)?;
        Ok(HiddenStates(self.forward(input, None).0))
    }

    /// Forward pass. `dropout_rng` switches on training mode.
    pub(crate) fn forward(
        &self,
        input: &CombinedInput,
        mut dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> (Array2<f64>, EncoderCache) {
        let cfg = &self.config;
        let m = input.len();
        let (d, nh, dh) = (cfg.d_model, cfg.n_heads, cfg.head_dim());
        let scale = 1.0 / (dh as f64).sqrt();
        let p_drop = cfg.dropout;

        let mut x = Array2::zeros((m, d));
        for (i, mut row) in x.rows_mut().into_iter().enumerate() {
            row += &self.token_embedding.row(input.token_ids[i]);
            row += &self.position_embedding.row(i);
            row += &self.segment_embedding.row(input.segment_ids[i] as usize);
        }

        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (h1, ln1) = layer_norm(&x, &layer.ln1_gamma, &layer.ln1_beta);
            let q = linear(&h1, &layer.w_q, &layer.b_q);
            let k = linear(&h1, &layer.w_k, &layer.b_k);
            let v = linear(&h1, &layer.w_v, &layer.b_v);
            let mut ctx = Array2::zeros((m, d));
            let mut attn = Vec::with_capacity(nh);
            for h in 0..nh {
                let cols = s![.., h * dh..(h + 1) * dh];
                let mut scores = q.slice(cols).dot(&k.slice(cols).t());
                scores *= scale;
                softmax_rows(&mut scores);
                ctx.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
                attn.push(scores);
            }
            let mut attn_out = linear(&ctx, &layer.w_o, &layer.b_o);
            let mask1 = dropout_rng
                .as_deref_mut()
                .filter(|_| p_drop > 0.0)
                .map(|rng| dropout_mask(rng, (m, d), p_drop));
            if let Some(mask) = &mask1 {
                attn_out *= mask;
            }
            x += &attn_out;

            let (h2, ln2) = layer_norm(&x, &layer.ln2_gamma, &layer.ln2_beta);
            let ff_pre = linear(&h2, &layer.w_ff1, &layer.b_ff1);
            let ff_act = gelu(&ff_pre);
            let mut ff_out = linear(&ff_act, &layer.w_ff2, &layer.b_ff2);
            let mask2 = dropout_rng
                .as_deref_mut()
                .filter(|_| p_drop > 0.0)
                .map(|rng| dropout_mask(rng, (m, d), p_drop));
            if let Some(mask) = &mask2 {
                ff_out *= mask;
            }
            x += &ff_out;

            caches.push(LayerCache {
                ln1,
                h1,
                q,
                k,
                v,
                attn,
                ctx,
                mask1,
                ln2,
                h2,
                ff_pre,
                ff_act,
                mask2,
            });
        }
        let (hidden, final_ln) = layer_norm(&x, &self.final_ln_gamma, &self.final_ln_beta);
        (
            hidden,
            EncoderCache {
                token_ids: input.token_ids.clone(),
                segment_ids: input.segment_ids.clone(),
                layers: caches,
                final_ln,
            },
        )
    }

    /// Accumulates parameter gradients into `grads` given `d_hidden`, the
    /// gradient of the loss with respect to the encoder output.
    pub(crate) fn backward(&self, cache: &EncoderCache, d_hidden: &Array2<f64>, grads: &mut EncoderParams) {
        let dh = self.config.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();

        let mut dx = layer_norm_backward(
            &cache.final_ln,
            &self.final_ln_gamma,
            d_hidden,
            &mut grads.final_ln_gamma,
            &mut grads.final_ln_beta,
        );

        for ((layer, lc), g) in self
            .layers
            .iter()
            .zip(&cache.layers)
            .zip(grads.layers.iter_mut())
            .rev()
        {
            // feed-forward branch
            let mut d_ff_out = dx.clone();
            if let Some(mask) = &lc.mask2 {
                d_ff_out *= mask;
            }
            let d_act = linear_backward(&lc.ff_act, &layer.w_ff2, &d_ff_out, &mut g.w_ff2, &mut g.b_ff2);
            let d_pre = gelu_backward(&lc.ff_pre, &d_act);
            let d_h2 = linear_backward(&lc.h2, &layer.w_ff1, &d_pre, &mut g.w_ff1, &mut g.b_ff1);
            dx += &layer_norm_backward(&lc.ln2, &layer.ln2_gamma, &d_h2, &mut g.ln2_gamma, &mut g.ln2_beta);

            // attention branch
            let mut d_attn_out = dx.clone();
            if let Some(mask) = &lc.mask1 {
                d_attn_out *= mask;
            }
            let d_ctx = linear_backward(&lc.ctx, &layer.w_o, &d_attn_out, &mut g.w_o, &mut g.b_o);
            let mut dq = Array2::zeros(lc.q.raw_dim());
            let mut dk = Array2::zeros(lc.k.raw_dim());
            let mut dv = Array2::zeros(lc.v.raw_dim());
            for (h, a) in lc.attn.iter().enumerate() {
                let cols = s![.., h * dh..(h + 1) * dh];
                let d_out = d_ctx.slice(cols);
                let da = d_out.dot(&lc.v.slice(cols).t());
                dv.slice_mut(cols).assign(&a.t().dot(&d_out));
                let mut ds = softmax_rows_backward(a.view(), &da);
                ds *= scale;
                dq.slice_mut(cols).assign(&ds.dot(&lc.k.slice(cols)));
                dk.slice_mut(cols).assign(&ds.t().dot(&lc.q.slice(cols)));
            }
            let mut d_h1 = linear_backward(&lc.h1, &layer.w_q, &dq, &mut g.w_q, &mut g.b_q);
            d_h1 += &linear_backward(&lc.h1, &layer.w_k, &dk, &mut g.w_k, &mut g.b_k);
            d_h1 += &linear_backward(&lc.h1, &layer.w_v, &dv, &mut g.w_v, &mut g.b_v);
            dx += &layer_norm_backward(&lc.ln1, &layer.ln1_gamma, &d_h1, &mut g.ln1_gamma, &mut g.ln1_beta);
        }

        for (i, row) in dx.axis_iter(Axis(0)).enumerate() {
            let mut tok = grads.token_embedding.row_mut(cache.token_ids[i]);
            tok += &row;
            let mut pos = grads.position_embedding.row_mut(i);
            pos += &row;
            let mut seg = grads.segment_embedding.row_mut(cache.segment_ids[i] as usize);
            seg += &row;
        }
    }
}
