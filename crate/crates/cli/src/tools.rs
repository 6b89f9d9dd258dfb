use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::Args;
use ear_core::io::write_atomic;
use ear_core::metrics::load_terms;
use ear_core::model::{Model, ModelConfig};
use ear_core::rng::{stream, Stream};
use ear_core::synthetic::{generate, load_templates};
use ear_core::terms::{entropy_profile, extract_overfitting_terms, terms_csv, ExtractOptions};
use ear_core::text::{build_vocab, encode, load_dataset, Split};
use ear_core::train::{gradient_check, Objective};
use ear_core::model::ModelParams;
use rand::Rng;

use crate::eval::load_model;
use crate::ModelArgs;

#[derive(Args, Debug)]
pub struct ExtractArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Corpus to run inference on, `text<TAB>label`.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 0.01)]
    min_df: f64,
    #[arg(long)]
    top_k: Option<usize>,
    /// Rank by entropies of the raw head-averaged attention rows.
    #[arg(long)]
    raw: bool,
    /// Write JSON instead of CSV.
    #[arg(long)]
    json: bool,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn extract_terms(args: ExtractArgs) -> Result<ExitCode> {
    let (checkpoint, vocab) = load_model(&args.model)?;
    let corpus = load_dataset(&args.corpus, Split::Train)?;
    let texts: Vec<String> = corpus.texts().map(String::from).collect();
    let labels = corpus.labels();
    let options = ExtractOptions {
        min_df: args.min_df,
        top_k: args.top_k,
        renormalize: !args.raw,
    };
    let stats = extract_overfitting_terms(&checkpoint, &vocab, &texts, Some(&labels), &options)?;
    let text = if args.json {
        serde_json::to_string_pretty(&stats)? + "\n"
    } else {
        terms_csv(&stats)
    };
    match &args.out {
        Some(p) => write_atomic(p, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// `template<TAB>label` file with one `{}` slot per template.
    #[arg(long)]
    templates: PathBuf,
    /// Identity terms, one per line.
    #[arg(long)]
    terms: PathBuf,
    /// Output dataset TSV.
    #[arg(long)]
    out: PathBuf,
    /// Membership sidecar path; defaults to `<out>.terms.tsv`.
    #[arg(long)]
    membership: Option<PathBuf>,
    /// Warn instead of failing when hateful and non-hateful templates differ in number.
    #[arg(long)]
    allow_unbalanced: bool,
}

pub fn gen_synthetic(args: GenArgs) -> Result<ExitCode> {
    let templates = load_templates(&args.templates)?;
    let terms = load_terms(&args.terms)?;
    let set = generate(&templates, &terms, args.allow_unbalanced)?;
    ear_core::text::write_dataset(&args.out, &set.dataset)?;
    let membership = args.membership.clone().unwrap_or_else(|| {
        let mut name = args.out.clone().into_os_string();
        name.push(".terms.tsv");
        PathBuf::from(name)
    });
    set.write_membership(&membership)?;
    println!(
        "{} instances ({} templates x {} terms) -> {}, {}",
        set.dataset.len(),
        templates.templates.len(),
        terms.len(),
        args.out.display(),
        membership.display()
    );
    Ok(ExitCode::SUCCESS)
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
}

const GRADCHECK_TOLERANCE: f64 = 1e-4;

pub fn gradcheck(args: GradcheckArgs) -> Result<ExitCode> {
    let vocab = build_vocab(&["a b c d e f"], 1)?;
    let config = ModelConfig {
        layers: 2,
        heads: 2,
        d_model: 8,
        d_key: 4,
        d_value: 4,
        d_ff: 8,
        vocab_size: vocab.len(),
        max_len: 8,
        num_classes: 2,
        attention_dropout: 0.0,
    };
    // Parameters well away from the initial scale so attention is far
    // from uniform.
    let mut rng = stream(args.seed, Stream::Init);
    let names = ModelParams::<ear_core::Matrix>::names(config.layers, config.heads);
    let mut model = Model::init(config, args.seed)?;
    for (m, name) in model.params.flatten_mut().into_iter().zip(names) {
        for v in m.as_mut_slice() {
            *v = if name.ends_with(".gain") {
                rng.gen_range(0.5..1.5)
            } else {
                rng.gen_range(-1.0..1.0)
            };
        }
    }
    let batch: Vec<_> = ["a b c", "d", "e f a b d", "c c"].iter().map(|t| encode(t, &vocab, 8)).collect();
    let labels = [1, 0, 1, 0];
    let mut worst = 0.0f64;
    for alpha in [0.0, 0.01, 1.0] {
        let report = gradient_check(&model, &batch, &labels, &Objective::new(alpha), args.step)?;
        println!(
            "alpha {alpha}: max relative error {:.3e} ({}) over {} values",
            report.max_rel_error, report.worst_parameter, report.checked_values
        );
        worst = worst.max(report.max_rel_error);
    }
    if worst < GRADCHECK_TOLERANCE {
        println!("ok: {worst:.3e} < {GRADCHECK_TOLERANCE:e}");
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("gradient check failed: {worst:.3e} >= {GRADCHECK_TOLERANCE:e}");
        Ok(ExitCode::from(1))
    }
}

#[derive(Args, Debug)]
pub struct ProfileArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    text: String,
}

pub fn profile(args: ProfileArgs) -> Result<ExitCode> {
    let (checkpoint, vocab) = load_model(&args.model)?;
    let p = entropy_profile(&checkpoint.model, &vocab, &args.text)?;
    println!("{}", serde_json::to_string_pretty(&p)?);
    Ok(ExitCode::SUCCESS)
}
