//! Attention entropy and the entropy-regularized training objective.
//!
//! For every layer the per-head attention maps are averaged, each averaged
//! row is pushed through a softmax over the real key positions, and the
//! Shannon entropy (nats) of the result is the token's attention entropy.
//! The layer's contextualization is the mean entropy over the real tokens,
//! and the regularizer is `−α · Σ_layers contextualization`.

use serde::{Deserialize, Serialize};

use crate::error::{EarError, Result};
use crate::model::AttentionRecord;
use crate::tensor::Matrix;
use crate::text::ClassPriors;

/// `−Σ p ln p` with `0 · ln 0 = 0`. No validation.
#[inline]
pub fn shannon_entropy(p: &[f64]) -> f64 {
    p.iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| -v * v.ln())
        .sum::<f64>()
}

/// Mean over heads of `d_s×d_s` attention maps. Masked key columns stay zero
/// as long as they are zero in every head.
pub fn average_heads(heads: &[Matrix], key_mask: &[bool]) -> Result<Matrix> {
    let first = heads
        .first()
        .ok_or_else(|| EarError::InvalidInput("no attention heads".into()))?;
    if heads.iter().any(|h| h.shape() != first.shape()) || first.cols() != key_mask.len() {
        return Err(EarError::Shape("attention heads disagree in shape".into()));
    }
    let mut avg = Matrix::zeros(first.rows(), first.cols());
    for h in heads {
        avg.add_assign(h);
    }
    let n = heads.len() as f64;
    for r in 0..avg.rows() {
        for (j, v) in avg.row_mut(r).iter_mut().enumerate() {
            *v = if key_mask[j] { *v / n } else { 0.0 };
        }
    }
    Ok(avg)
}

/// Softmax over the first `d_s` entries of an averaged attention row; the
/// padding tail is excluded from both numerator and denominator.
pub fn renormalize(averaged_row: &[f64], effective_len: usize) -> Vec<f64> {
    crate::autodiff::softmax(&averaged_row[..effective_len])
}

/// Attention entropy `H_i` of one probability row.
pub fn token_entropy(row: &[f64]) -> Result<f64> {
    if let Some(bad) = row.iter().find(|v| **v < 0.0 || !v.is_finite()) {
        return Err(EarError::InvalidInput(format!(
            "attention probability {bad} is not a valid probability"
        )));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(EarError::InvalidInput(format!(
            "attention row sums to {total}, expected 1"
        )));
    }
    Ok(shannon_entropy(row))
}

/// Average contextualization of a layer: mean of the per-token entropies over
/// all real positions ([CLS] and [SEP] included).
pub fn layer_contextualization(token_entropies: &[f64]) -> f64 {
    if token_entropies.is_empty() {
        return 0.0;
    }
    token_entropies.iter().sum::<f64>() / token_entropies.len() as f64
}

/// `L_R = −α Σ_ℓ H^ℓ`.
pub fn ear_loss(layer_entropies: &[f64], alpha: f64) -> f64 {
    -alpha * layer_entropies.iter().sum::<f64>()
}

/// Mean cross-entropy over a batch of `B×2` logits. With `priors`, each
/// sample's loss is divided by the prior of its true class.
pub fn classification_loss(
    logits: &Matrix,
    labels: &[u8],
    priors: Option<&ClassPriors>,
) -> Result<f64> {
    if logits.rows() != labels.len() || logits.rows() == 0 {
        return Err(EarError::Shape(format!(
            "{} logit rows for {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let weight = class_weight(label, priors)?;
        let z = logits.row(r);
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += weight * (lse - z[label as usize]);
    }
    Ok(total / labels.len() as f64)
}

pub(crate) fn class_weight(label: u8, priors: Option<&ClassPriors>) -> Result<f64> {
    match priors {
        None => Ok(1.0),
        Some(p) => {
            let prior = p.get(label);
            if prior <= 0.0 {
                Err(EarError::InvalidInput(format!(
                    "class {label} has zero prior; cannot weight its loss"
                )))
            } else {
                Ok(1.0 / prior)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub classification: f64,
    pub regularization: f64,
    pub alpha: f64,
}

pub fn total_loss(classification: f64, regularization: f64, alpha: f64) -> LossBreakdown {
    LossBreakdown {
        total: classification + regularization,
        classification,
        regularization,
        alpha,
    }
}

/// Per-layer, per-token attention entropies of one sequence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyProfile {
    pub effective_len: usize,
    /// `token[layer][position]` over the real positions.
    pub token: Vec<Vec<f64>>,
    /// `H^ℓ` per layer.
    pub layer: Vec<f64>,
}

impl EntropyProfile {
    /// Computes entropies from captured attention weights. With
    /// `renormalize == false` the head-averaged rows are used directly.
    pub fn from_record(record: &AttentionRecord, renormalize: bool) -> Result<Self> {
        let d = record.effective_len();
        let mask: Vec<bool> = (0..d).map(|_| true).collect();
        let mut token = Vec::with_capacity(record.num_layers());
        let mut layer = Vec::with_capacity(record.num_layers());
        for heads in record.layers() {
            let avg = average_heads(heads, &mask)?;
            let mut h = Vec::with_capacity(d);
            for i in 0..d {
                let row = if renormalize {
                    self::renormalize(avg.row(i), d)
                } else {
                    avg.row(i).to_vec()
                };
                h.push(token_entropy(&row)?);
            }
            layer.push(layer_contextualization(&h));
            token.push(h);
        }
        Ok(Self {
            effective_len: d,
            token,
            layer,
        })
    }

    /// Entropy per position averaged over layers.
    pub fn layer_mean_per_token(&self) -> Vec<f64> {
        let layers = self.token.len() as f64;
        (0..self.effective_len)
            .map(|i| self.token.iter().map(|l| l[i]).sum::<f64>() / layers)
            .collect()
    }

    /// Mean of `H^ℓ` over layers.
    pub fn mean(&self) -> f64 {
        self.layer.iter().sum::<f64>() / self.layer.len().max(1) as f64
    }
}
