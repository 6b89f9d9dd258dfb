use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::autodiff::{softmax, Tape, Var};
use crate::ear::{class_weight, total_loss, LossBreakdown};
use crate::error::{EarError, Result};
use crate::model::{forward_on_tape, Dropout, Model, ModelParams};
use crate::tensor::Matrix;
use crate::text::{ClassPriors, EncodedSequence};

/// What the training loss is made of.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub alpha: f64,
    pub renormalize: bool,
    /// Class priors for weighted cross-entropy; `None` for the plain mean.
    pub priors: Option<ClassPriors>,
}

impl Objective {
    pub fn new(alpha: f64) -> Self {
        Self {
            alpha,
            renormalize: true,
            priors: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradientResult {
    pub loss: LossBreakdown,
    pub gradients: ModelParams<Matrix>,
    /// `H^ℓ` averaged over the batch, per layer.
    pub layer_entropy: Vec<f64>,
}

struct LossGraph {
    total: Var,
    classification: Var,
    regularization: Var,
    layer_entropy: Vec<Var>,
}

/// Entropy `H^ℓ` of each layer for one sequence graph: heads averaged,
/// rows optionally softmax-renormalized, mean of the row entropies.
fn layer_entropies(tape: &mut Tape, attention: &[Vec<Var>], renormalize: bool) -> Vec<Var> {
    attention
        .iter()
        .map(|heads| {
            let avg = tape.mean_of(heads);
            let probs = if renormalize { tape.softmax_rows(avg, None) } else { avg };
            let h = tape.row_entropy(probs);
            tape.mean(h)
        })
        .collect()
}

fn build_loss(
    tape: &mut Tape,
    params: &ModelParams<Var>,
    seqs: &[Vec<usize>],
    labels: &[u8],
    objective: &Objective,
    mut dropout: Option<(&mut ChaCha8Rng, f64)>,
) -> Result<LossGraph> {
    let n = seqs.len() as f64;
    let mut ces = Vec::with_capacity(seqs.len());
    let mut per_layer: Vec<Vec<Var>> = vec![Vec::with_capacity(seqs.len()); params.layers.len()];
    for (ids, &label) in seqs.iter().zip(labels) {
        let d = dropout.as_mut().map(|(rng, p)| Dropout { rng: &mut **rng, p: *p });
        let g = forward_on_tape(tape, params, ids, d);
        let weight = class_weight(label, objective.priors.as_ref())?;
        ces.push(tape.cross_entropy(g.logits, label as usize, weight));
        for (slot, h) in per_layer
            .iter_mut()
            .zip(layer_entropies(tape, &g.attention, objective.renormalize))
        {
            slot.push(h);
        }
    }
    let ce_sum = tape.sum(&ces);
    let classification = tape.scale(ce_sum, 1.0 / n);
    let layer_entropy: Vec<Var> = per_layer
        .iter()
        .map(|hs| {
            let s = tape.sum(hs);
            tape.scale(s, 1.0 / n)
        })
        .collect();
    let layer_sum = tape.sum(&layer_entropy);
    let regularization = tape.scale(layer_sum, -objective.alpha);
    let total = tape.add(classification, regularization);
    Ok(LossGraph {
        total,
        classification,
        regularization,
        layer_entropy,
    })
}

fn batch_ids(model: &Model, batch: &[EncodedSequence], labels: &[u8]) -> Result<Vec<Vec<usize>>> {
    if batch.is_empty() {
        return Err(EarError::InvalidInput("empty batch".into()));
    }
    if batch.len() != labels.len() {
        return Err(EarError::Shape(format!("{} sequences, {} labels", batch.len(), labels.len())));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(EarError::InvalidInput(format!("label {l} is not 0 or 1")));
    }
    batch.iter().map(|s| model.check_sequence(s)).collect()
}

fn breakdown(classification: f64, regularization: f64, alpha: f64) -> Result<LossBreakdown> {
    if !classification.is_finite() {
        return Err(EarError::NonFinite("classification loss".into()));
    }
    if !regularization.is_finite() {
        return Err(EarError::NonFinite("regularization loss".into()));
    }
    // `+ 0.0` turns a `-0.0` regularizer (α = 0) into `0.0`.
    Ok(total_loss(classification, regularization + 0.0, alpha))
}

/// Exact gradients of `L_C + L_R` with respect to every parameter.
pub fn compute_gradients(
    model: &Model,
    batch: &[EncodedSequence],
    labels: &[u8],
    objective: &Objective,
) -> Result<GradientResult> {
    compute_gradients_with_dropout(model, batch, labels, objective, None)
}

pub(crate) fn compute_gradients_with_dropout(
    model: &Model,
    batch: &[EncodedSequence],
    labels: &[u8],
    objective: &Objective,
    dropout: Option<(&mut ChaCha8Rng, f64)>,
) -> Result<GradientResult> {
    let seqs = batch_ids(model, batch, labels)?;
    let mut tape = Tape::new();
    let pv = model.params.map(|m| tape.leaf(m.clone()));
    let graph = build_loss(&mut tape, &pv, &seqs, labels, objective, dropout)?;
    let loss = breakdown(
        tape.scalar(graph.classification),
        tape.scalar(graph.regularization),
        objective.alpha,
    )?;
    let layer_entropy = graph.layer_entropy.iter().map(|&v| tape.scalar(v)).collect();
    let mut grads = tape.backward(graph.total);
    let gradients = model
        .params
        .zip_map(&pv, |m, &v| grads.take(v).unwrap_or_else(|| Matrix::zeros(m.rows(), m.cols())));
    if !gradients.all_finite() {
        return Err(EarError::NonFinite("gradients".into()));
    }
    Ok(GradientResult {
        loss,
        gradients,
        layer_entropy,
    })
}

/// Forward-only evaluation of the objective on a set of sequences.
#[derive(Debug, Clone, Serialize)]
pub struct Evaluation {
    pub loss: LossBreakdown,
    pub layer_entropy: Vec<f64>,
    /// Probability of the hateful class per sequence.
    pub probabilities: Vec<f64>,
}

impl Evaluation {
    pub fn mean_entropy(&self) -> f64 {
        self.layer_entropy.iter().sum::<f64>() / self.layer_entropy.len().max(1) as f64
    }
}

/// Evaluates the loss without building gradients. Sequences are processed
/// independently (and in parallel), then combined in input order.
pub fn evaluate(
    model: &Model,
    batch: &[EncodedSequence],
    labels: &[u8],
    objective: &Objective,
) -> Result<Evaluation> {
    let seqs = batch_ids(model, batch, labels)?;
    let per_seq: Vec<(f64, Vec<f64>, f64)> = seqs
        .par_iter()
        .zip(labels.par_iter())
        .map(|(ids, &label)| {
            let mut tape = Tape::new();
            let pv = model.params.map(|m| tape.leaf(m.clone()));
            let g = forward_on_tape(&mut tape, &pv, ids, None);
            let weight = class_weight(label, objective.priors.as_ref())?;
            let ce = tape.cross_entropy(g.logits, label as usize, weight);
            let hs = layer_entropies(&mut tape, &g.attention, objective.renormalize);
            let p = softmax(tape.value(g.logits).as_slice())[1];
            Ok((tape.scalar(ce), hs.iter().map(|&h| tape.scalar(h)).collect(), p))
        })
        .collect::<Result<_>>()?;
    let n = per_seq.len() as f64;
    let layers = model.config.layers;
    let mut ce_sum = 0.0;
    let mut layer_sums = vec![0.0; layers];
    let mut probabilities = Vec::with_capacity(per_seq.len());
    for (ce, hs, p) in per_seq {
        ce_sum += ce;
        for (s, h) in layer_sums.iter_mut().zip(hs) {
            *s += h;
        }
        probabilities.push(p);
    }
    let layer_entropy: Vec<f64> = layer_sums.iter().map(|s| s / n).collect();
    let regularization = -objective.alpha * layer_entropy.iter().sum::<f64>();
    Ok(Evaluation {
        loss: breakdown(ce_sum / n, regularization, objective.alpha)?,
        layer_entropy,
        probabilities,
    })
}

/// Denominator floor of the relative error: entries whose analytic and
/// numeric gradients are both below this magnitude are compared absolutely.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_parameter: String,
    pub checked_values: usize,
    /// Maximum relative error per named tensor.
    pub per_tensor: Vec<(String, f64)>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRADCHECK_FLOOR)
}

/// Compares [`compute_gradients`] against central finite differences of
/// [`evaluate`] for every scalar parameter.
pub fn gradient_check(
    model: &Model,
    batch: &[EncodedSequence],
    labels: &[u8],
    objective: &Objective,
    step: f64,
) -> Result<GradCheckReport> {
    let analytic = compute_gradients(model, batch, labels, objective)?.gradients;
    let names = ModelParams::<Matrix>::names(model.config.layers, model.config.heads);
    let mut probe = model.clone();
    let mut per_tensor = Vec::with_capacity(names.len());
    let mut checked = 0;
    let (mut worst, mut worst_name) = (0.0f64, String::new());
    for (t, name) in names.iter().enumerate() {
        let mut tensor_max = 0.0f64;
        let n = analytic.flatten()[t].len();
        for i in 0..n {
            let original = probe.params.flatten()[t].as_slice()[i];
            probe.params.flatten_mut()[t].as_mut_slice()[i] = original + step;
            let plus = evaluate(&probe, batch, labels, objective)?.loss.total;
            probe.params.flatten_mut()[t].as_mut_slice()[i] = original - step;
            let minus = evaluate(&probe, batch, labels, objective)?.loss.total;
            probe.params.flatten_mut()[t].as_mut_slice()[i] = original;
            let numeric = (plus - minus) / (2.0 * step);
            let err = relative_error(analytic.flatten()[t].as_slice()[i], numeric);
            tensor_max = tensor_max.max(err);
            checked += 1;
        }
        if tensor_max > worst {
            worst = tensor_max;
            worst_name = name.clone();
        }
        per_tensor.push((name.clone(), tensor_max));
    }
    Ok(GradCheckReport {
        max_rel_error: worst,
        worst_parameter: worst_name,
        checked_values: checked,
        per_tensor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::text::{build_vocab, encode, Vocabulary};
    use approx::assert_abs_diff_eq;

    fn tiny(layers: usize, heads: usize, d_model: usize, seed: u64) -> (Model, Vocabulary) {
        let vocab = build_vocab(&["a b c d e"], 1).unwrap();
        let c = ModelConfig {
            layers,
            heads,
            d_model,
            d_key: 2,
            d_value: d_model / heads,
            d_ff: 6,
            vocab_size: vocab.len(),
            max_len: 8,
            num_classes: 2,
            attention_dropout: 0.0,
        };
        (Model::init(c, seed).unwrap(), vocab)
    }

    #[test]
    fn classifier_bias_gradient_is_closed_form() {
        let (model, vocab) = tiny(1, 1, 4, 3);
        let seq = encode("a", &vocab, 8);
        for (label, priors) in [(1u8, None), (0, Some(ClassPriors::new(0.8, 0.2)))] {
            let obj = Objective { alpha: 0.0, renormalize: true, priors };
            let g = compute_gradients(&model, &[seq.clone()], &[label], &obj).unwrap();
            let logits = model.forward(&[seq.clone()]).unwrap().logits;
            let p = softmax(logits.row(0));
            let w = priors.map_or(1.0, |pr| 1.0 / pr.get(label));
            for k in 0..2 {
                let onehot = if k == label as usize { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(
                    g.gradients.classifier_bias.get(0, k),
                    (p[k] - onehot) * w,
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn entropy_gradient_vanishes_at_uniform_attention() {
        let (mut model, vocab) = tiny(1, 1, 4, 4);
        for l in &mut model.params.layers {
            for h in &mut l.heads {
                h.query = Matrix::zeros(4, 2);
                h.key = Matrix::zeros(4, 2);
            }
        }
        let seq = encode("a b c", &vocab, 8);
        let ear_only = |alpha| {
            let obj = Objective::new(alpha);
            compute_gradients(&model, &[seq.clone()], &[1], &obj).unwrap().gradients
        };
        let with = ear_only(1.0);
        let without = ear_only(0.0);
        let dq = &with.layers[0].heads[0].query;
        let dq0 = &without.layers[0].heads[0].query;
        for (a, b) in dq.as_slice().iter().zip(dq0.as_slice()) {
            assert_abs_diff_eq!(a - b, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn finite_differences_agree_on_tiny_model() {
        let (model, vocab) = tiny(1, 1, 4, 5);
        let batch = [encode("a b", &vocab, 8)];
        for alpha in [0.0, 0.01, 1.0] {
            let report = gradient_check(&model, &batch, &[1], &Objective::new(alpha), 1e-5).unwrap();
            assert!(report.max_rel_error < 1e-4, "alpha {alpha}: {report:?}");
        }
    }

    #[test]
    fn loss_breakdown_is_consistent() {
        let (model, vocab) = tiny(2, 2, 4, 6);
        let batch = [encode("a b c", &vocab, 8), encode("d", &vocab, 8)];
        let g = compute_gradients(&model, &batch, &[1, 0], &Objective::new(0.5)).unwrap();
        assert_abs_diff_eq!(g.loss.total, g.loss.classification + g.loss.regularization, epsilon = 1e-12);
        assert_abs_diff_eq!(
            g.loss.regularization,
            -0.5 * g.layer_entropy.iter().sum::<f64>(),
            epsilon = 1e-12
        );
        let e = evaluate(&model, &batch, &[1, 0], &Objective::new(0.5)).unwrap();
        assert_abs_diff_eq!(e.loss.total, g.loss.total, epsilon = 1e-12);
        let zero = compute_gradients(&model, &batch, &[1, 0], &Objective::new(0.0)).unwrap();
        assert_eq!(zero.loss.regularization.to_bits(), 0.0f64.to_bits());
    }

    #[test]
    fn empty_or_mismatched_batches_fail() {
        let (model, vocab) = tiny(1, 1, 4, 7);
        assert!(compute_gradients(&model, &[], &[], &Objective::new(0.0)).is_err());
        let seq = encode("a", &vocab, 8);
        assert!(compute_gradients(&model, &[seq], &[1, 0], &Objective::new(0.0)).is_err());
    }
}
