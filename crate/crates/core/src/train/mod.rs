//! Optimization of the entropy-regularized objective.

mod config;
mod gradients;
mod optim;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{parse_config, ConfigEntry, TrainConfig, PRESETS};
pub(crate) use gradients::compute_gradients_with_dropout;
pub use gradients::{
    compute_gradients, evaluate, gradient_check, relative_error, Evaluation, GradCheckReport, GradientResult,
    Objective, GRADCHECK_FLOOR,
};
pub use optim::{AdamW, AdamWConfig, LinearSchedule};

use crate::ear::LossBreakdown;
use crate::error::{EarError, Result};
use crate::metrics::f1_scores;
use crate::model::{Checkpoint, Model, ModelConfig};
use crate::rng::{stream, Stream};
use crate::text::{encode, EncodedSequence, LabeledDataset, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Learning rate used by the last step of the epoch.
    pub learning_rate: f64,
    /// Training losses averaged over the epoch's samples.
    pub train: LossBreakdown,
    pub train_entropy: f64,
    pub valid: LossBreakdown,
    pub valid_entropy: f64,
    pub valid_layer_entropy: Vec<f64>,
    pub valid_f1_weighted: f64,
    pub valid_f1_hate: f64,
    pub improved: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStopping,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were kept.
    pub best_epoch: Option<usize>,
    pub stop_reason: Option<StopReason>,
}

impl TrainLog {
    fn new(seed: u64) -> Self {
        Self {
            seed,
            epochs: Vec::new(),
            best_epoch: None,
            stop_reason: None,
        }
    }

    /// One JSON object per epoch, then a closing summary object.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            let _ = writeln!(out, "{}", serde_json::to_string(e).expect("epoch record serializes"));
        }
        let summary = serde_json::json!({
            "seed": self.seed,
            "best_epoch": self.best_epoch,
            "stop_reason": self.stop_reason,
        });
        let _ = writeln!(out, "{summary}");
        out
    }

    pub fn best(&self) -> Option<&EpochRecord> {
        let b = self.best_epoch?;
        self.epochs.iter().find(|e| e.epoch == b)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
}

fn encode_all(ds: &LabeledDataset, vocab: &Vocabulary, max_len: usize) -> Vec<EncodedSequence> {
    ds.texts().map(|t| encode(t, vocab, max_len)).collect()
}

fn diverged(epoch: usize, term: String, mut log: TrainLog) -> EarError {
    log.stop_reason = Some(StopReason::Diverged);
    EarError::Diverged {
        epoch,
        term,
        log: Box::new(log),
    }
}

/// Trains a freshly initialized model. `model_config.vocab_size` and
/// `max_len` are taken from `vocab` and `cfg`.
pub fn train(
    cfg: &TrainConfig,
    model_config: &ModelConfig,
    vocab: &Vocabulary,
    train_set: &LabeledDataset,
    valid_set: &LabeledDataset,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut mc = model_config.clone();
    mc.vocab_size = vocab.len();
    mc.max_len = cfg.max_len;
    let mut model = Model::init(mc, cfg.seed)?;

    let train_x = encode_all(train_set, vocab, cfg.max_len);
    let train_y = train_set.labels();
    let valid_x = encode_all(valid_set, vocab, cfg.max_len);
    let valid_y = valid_set.labels();
    let objective = Objective {
        alpha: cfg.alpha,
        renormalize: cfg.renormalize,
        priors: cfg.use_class_weights.then(|| train_set.priors()),
    };

    let batches_per_epoch = train_x.len().div_ceil(cfg.batch_size);
    let schedule = LinearSchedule::new(cfg.learning_rate, cfg.warmup_fraction, batches_per_epoch * cfg.max_epochs);
    let mut optimizer = AdamW::new(
        AdamWConfig {
            weight_decay: cfg.weight_decay,
            ..AdamWConfig::default()
        },
        &model.params,
    );
    let mut shuffle_rng = stream(cfg.seed, Stream::Shuffle);
    let mut dropout_rng = stream(cfg.seed, Stream::Dropout);
    let p_drop = model.config.attention_dropout;

    let mut log = TrainLog::new(cfg.seed);
    let mut best: Option<(f64, Model)> = None;
    let mut stale = 0usize;
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..train_x.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut c_sum, mut r_sum, mut h_sum) = (0.0, 0.0, 0.0);
        let mut lr = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let xs: Vec<EncodedSequence> = chunk.iter().map(|&i| train_x[i].clone()).collect();
            let ys: Vec<u8> = chunk.iter().map(|&i| train_y[i]).collect();
            let dropout = (p_drop > 0.0).then_some((&mut dropout_rng, p_drop));
            let g = match compute_gradients_with_dropout(&model, &xs, &ys, &objective, dropout) {
                Ok(g) => g,
                Err(EarError::NonFinite(term)) => return Err(diverged(epoch, term, log)),
                Err(e) => return Err(e),
            };
            lr = schedule.lr(step);
            optimizer.step(&mut model.params, &g.gradients, lr);
            step += 1;
            if !model.params.all_finite() {
                return Err(diverged(epoch, "parameters".into(), log));
            }
            let n = chunk.len() as f64;
            c_sum += g.loss.classification * n;
            r_sum += g.loss.regularization * n;
            h_sum += n * g.layer_entropy.iter().sum::<f64>() / g.layer_entropy.len() as f64;
        }
        let n = train_x.len() as f64;
        let train_loss = crate::ear::total_loss(c_sum / n, r_sum / n, cfg.alpha);

        let eval = match evaluate(&model, &valid_x, &valid_y, &objective) {
            Ok(e) => e,
            Err(EarError::NonFinite(term)) => return Err(diverged(epoch, format!("validation {term}"), log)),
            Err(e) => return Err(e),
        };
        let f1 = f1_scores(&valid_y, &eval.probabilities, 0.5);
        let improved = best.as_ref().is_none_or(|(b, _)| eval.loss.total < *b);
        log.epochs.push(EpochRecord {
            epoch,
            learning_rate: lr,
            train: train_loss,
            train_entropy: h_sum / n,
            valid: eval.loss,
            valid_entropy: eval.mean_entropy(),
            valid_layer_entropy: eval.layer_entropy.clone(),
            valid_f1_weighted: f1.weighted,
            valid_f1_hate: f1.hate,
            improved,
        });
        log::info!(
            "seed {} epoch {epoch}: train {:.4} (C {:.4}, R {:.4}), valid {:.4}, F1_w {:.4}, H {:.4}",
            cfg.seed,
            train_loss.total,
            train_loss.classification,
            train_loss.regularization,
            eval.loss.total,
            f1.weighted,
            eval.mean_entropy()
        );
        if improved {
            best = Some((eval.loss.total, model.clone()));
            log.best_epoch = Some(epoch);
            stale = 0;
        } else {
            stale += 1;
            if cfg.patience.is_some_and(|p| stale > p) {
                log.stop_reason = Some(StopReason::EarlyStopping);
                break;
            }
        }
    }
    if log.stop_reason.is_none() {
        log.stop_reason = Some(StopReason::MaxEpochs);
    }
    let kept = if cfg.patience.is_none() {
        log.best_epoch = Some(log.epochs.len());
        model
    } else {
        best.expect("at least one epoch").1
    };
    Ok(TrainOutcome {
        checkpoint: Checkpoint::new(kept, vocab.content_hash()),
        log,
    })
}

#[derive(Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub outcome: Result<TrainOutcome>,
}

/// Trains `n_seeds` independent models with seeds `cfg.seed .. cfg.seed + n`.
/// A failed run is kept as an error; the others continue.
pub fn run_seeds(
    cfg: &TrainConfig,
    model_config: &ModelConfig,
    vocab: &Vocabulary,
    train_set: &LabeledDataset,
    valid_set: &LabeledDataset,
    n_seeds: usize,
) -> Result<Vec<SeedRun>> {
    if n_seeds == 0 {
        return Err(EarError::InvalidInput("n_seeds must be at least 1".into()));
    }
    Ok((0..n_seeds as u64)
        .into_par_iter()
        .map(|k| {
            let seed = cfg.seed + k;
            let run_cfg = TrainConfig { seed, ..cfg.clone() };
            let outcome = train(&run_cfg, model_config, vocab, train_set, valid_set);
            if let Err(e) = &outcome {
                log::warn!("seed {seed} failed: {e}");
            }
            SeedRun { seed, outcome }
        })
        .collect())
}

/// Mean and sample standard deviation; the deviation is `None` for fewer
/// than two values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub std: Option<f64>,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = (n > 1).then(|| {
            let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
            (ss / (n - 1) as f64).sqrt()
        });
        Some(Self { mean, std, n })
    }
}

/// Summary of the kept epoch across successful runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seeds: Vec<u64>,
    pub failed: Vec<u64>,
    pub valid_loss: Option<MeanStd>,
    pub valid_f1_weighted: Option<MeanStd>,
    pub valid_f1_hate: Option<MeanStd>,
    pub valid_entropy: Option<MeanStd>,
}

impl SeedSummary {
    pub fn from_runs(runs: &[SeedRun]) -> Self {
        let mut ok = Vec::new();
        let mut failed = Vec::new();
        let mut best = Vec::new();
        for r in runs {
            match &r.outcome {
                Ok(o) => {
                    ok.push(r.seed);
                    if let Some(b) = o.log.best() {
                        best.push(b.clone());
                    }
                }
                Err(_) => failed.push(r.seed),
            }
        }
        let col = |f: fn(&EpochRecord) -> f64| MeanStd::of(&best.iter().map(f).collect::<Vec<_>>());
        Self {
            seeds: ok,
            failed,
            valid_loss: col(|e| e.valid.total),
            valid_f1_weighted: col(|e| e.valid_f1_weighted),
            valid_f1_hate: col(|e| e.valid_f1_hate),
            valid_entropy: col(|e| e.valid_entropy),
        }
    }
}
