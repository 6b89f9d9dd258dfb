use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::Args;
use ear_core::io::write_atomic;
use ear_core::metrics::{
    bias_report, bootstrap_significance, f1_scores, load_terms, read_scores, roc_auc, term_memberships,
    write_scores, BiasReport, BootstrapConfig, F1Metric, ScoreRow, ScoredInstance,
};
use ear_core::synthetic::load_membership;
use ear_core::text::{encode, load_dataset, LabeledDataset, Split, Vocabulary};
use ear_core::{Checkpoint, EarError};
use serde::Serialize;

use crate::ModelArgs;

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Test data, `text<TAB>label`.
    #[arg(long)]
    test: PathBuf,
    /// Synthetic set for the bias metrics; the test set is used when absent.
    #[arg(long)]
    synthetic: Option<PathBuf>,
    /// `id<TAB>term` sidecar of the synthetic set. Without it, terms are
    /// matched in the text.
    #[arg(long)]
    membership: Option<PathBuf>,
    /// Identity terms, one per line.
    #[arg(long)]
    terms: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Scores of a baseline system on the same test set (`id<TAB>score<TAB>label`).
    #[arg(long)]
    baseline_scores: Option<PathBuf>,
    /// Seed of the bootstrap resampling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    resamples: usize,
    #[arg(long, default_value_t = 0.2)]
    fraction: f64,
}

#[derive(Serialize)]
struct TestMetrics {
    instances: usize,
    f1_weighted: f64,
    f1_hate: f64,
    roc_auc: Option<f64>,
}

#[derive(Serialize)]
struct Significance {
    baseline: PathBuf,
    resamples: usize,
    fraction: f64,
    seed: u64,
    /// Fraction of resamples where the baseline matches or beats this model.
    p_f1_weighted: f64,
    p_f1_hate: f64,
}

#[derive(Serialize)]
struct EvalReport {
    checkpoint: PathBuf,
    test: TestMetrics,
    #[serde(skip_serializing_if = "Option::is_none")]
    bias: Option<BiasReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    significance: Option<Significance>,
}

pub fn load_model(args: &ModelArgs) -> Result<(Checkpoint, Vocabulary)> {
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let vocab = Vocabulary::load(&args.vocab)?;
    let hash = vocab.content_hash();
    if hash != checkpoint.vocab_hash {
        return Err(EarError::VocabMismatch {
            expected: checkpoint.vocab_hash.clone(),
            found: hash,
        }
        .into());
    }
    Ok((checkpoint, vocab))
}

fn score(checkpoint: &Checkpoint, vocab: &Vocabulary, data: &LabeledDataset) -> Result<Vec<f64>> {
    let max_len = checkpoint.model.config.max_len;
    let seqs: Vec<_> = data.texts().map(|t| encode(t, vocab, max_len)).collect();
    Ok(checkpoint.model.hate_probabilities(&seqs)?)
}

fn score_rows(scores: &[f64], labels: &[u8]) -> Vec<ScoreRow> {
    scores
        .iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (&score, &label))| ScoreRow {
            id: i.to_string(),
            score,
            label,
        })
        .collect()
}

pub fn run(args: EvalArgs) -> Result<ExitCode> {
    let (checkpoint, vocab) = load_model(&args.model)?;
    let test = load_dataset(&args.test, Split::Test)?;
    let terms = args.terms.as_deref().map(load_terms).transpose()?;
    let synthetic = args
        .synthetic
        .as_deref()
        .map(|p| load_dataset(p, Split::Synthetic))
        .transpose()?;
    if args.membership.is_some() && synthetic.is_none() {
        bail!(EarError::InvalidInput("--membership needs --synthetic".into()));
    }
    let baseline = args.baseline_scores.as_deref().map(read_scores).transpose()?;
    let out = &args.out_dir;

    let test_scores = score(&checkpoint, &vocab, &test)?;
    let test_labels = test.labels();
    write_scores(&out.join("test_scores.tsv"), &score_rows(&test_scores, &test_labels))?;
    let f1 = f1_scores(&test_labels, &test_scores, 0.5);
    let test_instances: Vec<ScoredInstance> = test_scores
        .iter()
        .zip(&test_labels)
        .map(|(&s, &l)| ScoredInstance::new(s, l, Vec::new()))
        .collect::<ear_core::Result<_>>()?;
    let metrics = TestMetrics {
        instances: test.len(),
        f1_weighted: f1.weighted,
        f1_hate: f1.hate,
        roc_auc: roc_auc(&test_instances).ok(),
    };

    let bias = match &terms {
        None => None,
        Some(terms) => {
            let (data, scores) = match &synthetic {
                Some(s) => {
                    let scores = score(&checkpoint, &vocab, s)?;
                    write_scores(&out.join("synthetic_scores.tsv"), &score_rows(&scores, &s.labels()))?;
                    (s, scores)
                }
                None => (&test, test_scores.clone()),
            };
            let memberships = match &args.membership {
                Some(p) => load_membership(p, data.len())?,
                None => data.texts().map(|t| term_memberships(t, terms)).collect(),
            };
            let instances: Vec<ScoredInstance> = scores
                .iter()
                .zip(data.labels())
                .zip(memberships)
                .map(|((&s, l), m)| ScoredInstance::new(s, l, m))
                .collect::<ear_core::Result<_>>()?;
            let report = bias_report(&instances, terms)?;
            write_atomic(&out.join("bias_terms.csv"), report.to_csv().as_bytes())?;
            Some(report)
        }
    };

    let significance = match (&baseline, &args.baseline_scores) {
        (Some(rows), Some(path)) => {
            if rows.len() != test.len() {
                bail!(EarError::InvalidInput(format!(
                    "{} has {} scores for {} test instances",
                    path.display(),
                    rows.len(),
                    test.len()
                )));
            }
            if rows.iter().zip(&test_labels).any(|(r, &l)| r.label != l) {
                bail!(EarError::InvalidInput(format!("{} labels differ from the test set", path.display())));
            }
            let b: Vec<f64> = rows.iter().map(|r| r.score).collect();
            let cfg = BootstrapConfig {
                resamples: args.resamples,
                fraction: args.fraction,
                seed: args.seed,
                ..BootstrapConfig::default()
            };
            Some(Significance {
                baseline: path.clone(),
                resamples: args.resamples,
                fraction: args.fraction,
                seed: args.seed,
                p_f1_weighted: bootstrap_significance(&test_scores, &b, &test_labels, F1Metric::Weighted, &cfg)?,
                p_f1_hate: bootstrap_significance(&test_scores, &b, &test_labels, F1Metric::Hate, &cfg)?,
            })
        }
        _ => None,
    };

    let report = EvalReport {
        checkpoint: args.model.checkpoint.clone(),
        test: metrics,
        bias,
        significance,
    };
    let json = serde_json::to_string_pretty(&report)?;
    write_atomic(&out.join("report.json"), json.as_bytes())?;
    println!("{json}");
    Ok(ExitCode::SUCCESS)
}
