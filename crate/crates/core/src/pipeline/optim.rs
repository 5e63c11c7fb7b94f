use serde::{Deserialize, Serialize};

use crate::model::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global L2 norm the gradient is rescaled to when it exceeds it.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: Some(1.0),
        }
    }
}

pub struct Adam {
    config: AdamConfig,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ModelParams) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|(_, t)| t.len()).collect();
        Self {
            config,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        let c = self.config;
        self.step += 1;
        let grads = grads.tensors();
        let norm = grads
            .iter()
            .flat_map(|(_, g)| g.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        let clip = match c.clip_norm {
            Some(max) if norm > max => max / norm,
            _ => 1.0,
        };
        let bc1 = 1.0 - c.beta1.powi(self.step);
        let bc2 = 1.0 - c.beta2.powi(self.step);
        for (((p, (_, g)), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for i in 0..p.len() {
                let gi = g[i] * clip;
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] -= c.learning_rate * mhat / (vhat.sqrt() + c.epsilon);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::span_model::SpanStrategy;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = EncoderConfig {
            vocab_size: 5,
            d_model: 4,
            n_layers: 1,
            n_heads: 2,
            d_ff: 4,
            max_len: 8,
            dropout: 0.0,
        };
        let mut params = ModelParams::init(cfg, SpanStrategy::PerToken, 0).unwrap();
        let before = params.head.b_start;
        let mut grads = params.zeros_like();
        grads.head.b_start = 0.5;
        let mut opt = Adam::new(
            AdamConfig {
                clip_norm: None,
                ..AdamConfig::default()
            },
            &params,
        );
        opt.step(&mut params, &grads);
        // bias-corrected Adam's first step has magnitude ~lr for any nonzero gradient
        assert!((before - params.head.b_start - 1e-3).abs() < 1e-9);
        assert_eq!(params.head.b_end, 0.0);
    }
}
