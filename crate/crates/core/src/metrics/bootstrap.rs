use rand::Rng;
use serde::{Deserialize, Serialize};

use super::f1::{f1_on_indices, F1Metric};
use crate::error::{EarError, Result};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub resamples: usize,
    /// Size of each resample as a fraction of the instance count.
    pub fraction: f64,
    pub seed: u64,
    pub threshold: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            resamples: 1000,
            fraction: 0.2,
            seed: 0,
            threshold: 0.5,
        }
    }
}

/// One-sided bootstrap test of "A scores higher than B" on an F1 metric.
/// Returns the fraction of resamples in which B matches or beats A; exact
/// ties count one half.
pub fn bootstrap_significance(
    scores_a: &[f64],
    scores_b: &[f64],
    labels: &[u8],
    metric: F1Metric,
    config: &BootstrapConfig,
) -> Result<f64> {
    if scores_a.len() != labels.len() || scores_b.len() != labels.len() {
        return Err(EarError::InvalidInput(format!(
            "score vectors of length {} and {} for {} labels",
            scores_a.len(),
            scores_b.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(EarError::InvalidInput("no instances to resample".into()));
    }
    if config.resamples == 0 || !(config.fraction > 0.0 && config.fraction <= 1.0) {
        return Err(EarError::InvalidInput("bootstrap needs resamples ≥ 1 and fraction in (0, 1]".into()));
    }
    let n = labels.len();
    let size = ((config.fraction * n as f64).round() as usize).max(1);
    let mut rng = stream(config.seed, Stream::Bootstrap);
    let mut idx = vec![0usize; size];
    let mut credit = 0.0;
    for _ in 0..config.resamples {
        for i in idx.iter_mut() {
            *i = rng.gen_range(0..n);
        }
        let a = f1_on_indices(labels, scores_a, config.threshold, &idx).get(metric);
        let b = f1_on_indices(labels, scores_b, config.threshold, &idx).get(metric);
        if b > a {
            credit += 1.0;
        } else if b == a {
            credit += 0.5;
        }
    }
    Ok(credit / config.resamples as f64)
}
