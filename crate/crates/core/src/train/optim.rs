//! Adaptive-moment optimizer with decoupled weight decay and a linear
//! warmup/decay learning-rate schedule.

use crate::model::{is_decayed, ModelParams};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

pub struct AdamW {
    config: AdamWConfig,
    first: ModelParams<Matrix>,
    second: ModelParams<Matrix>,
    decay: Vec<bool>,
    steps: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &ModelParams<Matrix>) -> Self {
        let decay = ModelParams::<Matrix>::names(params.layers.len(), params.num_heads())
            .iter()
            .map(|n| is_decayed(n))
            .collect();
        Self {
            config,
            first: params.zeros_like(),
            second: params.zeros_like(),
            decay,
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut ModelParams<Matrix>, grads: &ModelParams<Matrix>, lr: f64) {
        self.steps += 1;
        let c = self.config;
        let t = self.steps as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let tensors = params
            .flatten_mut()
            .into_iter()
            .zip(grads.flatten())
            .zip(self.first.flatten_mut())
            .zip(self.second.flatten_mut())
            .zip(&self.decay);
        for ((((p, g), m), v), &decay) in tensors {
            let p = p.as_mut_slice();
            let g = g.as_slice();
            let m = m.as_mut_slice();
            let v = v.as_mut_slice();
            for i in 0..p.len() {
                if decay {
                    p[i] -= lr * c.weight_decay * p[i];
                }
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
    }
}

/// Linear ramp from 0 to `peak` over the warmup steps, then linear decay to
/// 0 at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearSchedule {
    pub peak: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LinearSchedule {
    pub fn new(peak: f64, warmup_fraction: f64, total_steps: usize) -> Self {
        Self {
            peak,
            warmup_steps: (warmup_fraction * total_steps as f64).ceil() as usize,
            total_steps,
        }
    }

    /// Learning rate for the update that follows `completed` finished steps.
    pub fn lr(&self, completed: usize) -> f64 {
        if completed < self.warmup_steps {
            return self.peak * completed as f64 / self.warmup_steps as f64;
        }
        let remaining = self.total_steps.saturating_sub(completed) as f64;
        let span = self.total_steps.saturating_sub(self.warmup_steps).max(1) as f64;
        self.peak * remaining / span
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::rng::{stream, Stream};

    fn params() -> ModelParams<Matrix> {
        let mut c = ModelConfig::desk(8);
        c.max_len = 6;
        ModelParams::init(&c, &mut stream(1, Stream::Init))
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut p = params();
        let before = p.clone();
        let grads = p.map(|m| m.map(|_| 0.3));
        let mut opt = AdamW::new(AdamWConfig::default(), &p);
        opt.step(&mut p, &grads, 0.0);
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = params();
        let before = p.clone();
        let grads = p.map(|m| m.map(|_| 2.0));
        let cfg = AdamWConfig { weight_decay: 0.0, ..AdamWConfig::default() };
        let mut opt = AdamW::new(cfg, &p);
        opt.step(&mut p, &grads, 0.01);
        // Bias-corrected first step is lr · g/|g|.
        for (a, b) in p.flatten().into_iter().zip(before.flatten()) {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert!((y - x - 0.01).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn decay_skips_biases_and_gains() {
        let mut p = params();
        let before = p.clone();
        let grads = p.zeros_like();
        let cfg = AdamWConfig { weight_decay: 0.5, ..AdamWConfig::default() };
        let mut opt = AdamW::new(cfg, &p);
        opt.step(&mut p, &grads, 0.1);
        assert_eq!(p.layers[0].norm1_gain, before.layers[0].norm1_gain);
        assert_eq!(p.classifier_bias, before.classifier_bias);
        let w0 = before.layers[0].heads[0].query.get(0, 0);
        assert!((p.layers[0].heads[0].query.get(0, 0) - w0 * 0.95).abs() < 1e-15);
    }

    #[test]
    fn schedule_shape() {
        let s = LinearSchedule::new(1.0, 0.1, 100);
        assert_eq!(s.warmup_steps, 10);
        assert_eq!(s.lr(0), 0.0);
        assert!((s.lr(5) - 0.5).abs() < 1e-15);
        assert_eq!(s.lr(10), 1.0);
        assert!((s.lr(55) - 0.5).abs() < 1e-15);
        assert_eq!(s.lr(100), 0.0);
        let flat = LinearSchedule::new(1.0, 0.0, 10);
        assert_eq!(flat.lr(0), 1.0);
    }
}
