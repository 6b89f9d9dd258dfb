use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use clap::Args;
use ear_core::io::{file_sha256, write_atomic};
use ear_core::model::ModelConfig;
use ear_core::rng::{stream, Stream};
use ear_core::text::{load_dataset, stratified_split, Split, VocabBuilder, Vocabulary};
use ear_core::train::{parse_config, run_seeds, SeedSummary, TrainConfig};
use ear_core::EarError;
use serde::Serialize;

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// `key=value` config file; flags given here override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training data, `text<TAB>label` with a header line.
    #[arg(long)]
    train: PathBuf,
    /// Validation data; split off the training data when absent.
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Number of seeds, starting at the configured seed.
    #[arg(long, default_value_t = 1)]
    seeds: usize,
    /// Use an existing vocabulary instead of building one from the training data.
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Minimum word count for vocabulary entries.
    #[arg(long, default_value_t = 1)]
    min_count: usize,
    /// Sub-word merges to learn for the vocabulary (0 = whole words only).
    #[arg(long, default_value_t = 0)]
    merges: usize,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Non-improving epochs tolerated; `none` disables early stopping.
    #[arg(long)]
    patience: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    warmup_fraction: Option<f64>,
    /// Weight each sample's loss by the inverse training prior of its class.
    #[arg(long)]
    class_weights: bool,
    /// Skip softmax re-normalization of averaged attention (ablation).
    #[arg(long)]
    no_renormalize: bool,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    d_ff: Option<usize>,
}

#[derive(Serialize)]
struct DatasetEntry {
    role: &'static str,
    path: PathBuf,
    sha256: String,
    examples: usize,
}

#[derive(Serialize)]
struct RunManifest {
    tool_version: &'static str,
    started_at: u64,
    finished_at: Option<u64>,
    config: TrainConfig,
    config_text: String,
    model: ModelConfig,
    vocab_hash: String,
    datasets: Vec<DatasetEntry>,
    seeds: Vec<u64>,
    artifacts: Vec<PathBuf>,
    failed_seeds: Vec<u64>,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

struct Setting {
    key: String,
    value: String,
    /// Config file line the setting came from; `None` for flags.
    origin: Option<(PathBuf, usize)>,
}

fn resolve(args: &TrainArgs) -> Result<(TrainConfig, ModelConfig)> {
    let mut settings: Vec<Setting> = Vec::new();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).map_err(|e| EarError::io(path, e))?;
        for e in parse_config(&text, path)? {
            settings.push(Setting {
                key: e.key,
                value: e.value,
                origin: Some((path.clone(), e.line)),
            });
        }
    }
    let mut flag = |key: &str, value: Option<String>| {
        if let Some(value) = value {
            settings.push(Setting {
                key: key.to_string(),
                value,
                origin: None,
            });
        }
    };
    flag("preset", args.preset.clone());
    flag("alpha", args.alpha.map(|v| v.to_string()));
    flag("learning_rate", args.learning_rate.map(|v| v.to_string()));
    flag("batch_size", args.batch_size.map(|v| v.to_string()));
    flag("max_epochs", args.max_epochs.map(|v| v.to_string()));
    flag("patience", args.patience.clone());
    flag("seed", args.seed.map(|v| v.to_string()));
    flag("max_len", args.max_len.map(|v| v.to_string()));
    flag("weight_decay", args.weight_decay.map(|v| v.to_string()));
    flag("warmup_fraction", args.warmup_fraction.map(|v| v.to_string()));
    flag("use_class_weights", args.class_weights.then(|| "true".into()));
    flag("renormalize", args.no_renormalize.then(|| "false".into()));
    flag("layers", args.layers.map(|v| v.to_string()));
    flag("heads", args.heads.map(|v| v.to_string()));
    flag("d_model", args.d_model.map(|v| v.to_string()));
    flag("d_ff", args.d_ff.map(|v| v.to_string()));
    // A preset resets every training field, so presets apply first.
    settings.sort_by_key(|s| s.key != "preset");

    let mut cfg = TrainConfig::default();
    let mut model = ModelConfig::desk(0);
    let mut d_value_set = false;
    for s in &settings {
        let applied = cfg.set(&s.key, &s.value).and_then(|known| Ok(known || model.set(&s.key, &s.value)?));
        let err = match applied {
            Ok(true) => None,
            Ok(false) => Some(format!("unknown setting {:?}", s.key)),
            Err(e) => Some(e.to_string()),
        };
        if let Some(msg) = err {
            return Err(match &s.origin {
                Some((path, line)) => EarError::parse(path, *line, msg),
                None => EarError::InvalidInput(msg),
            }
            .into());
        }
        d_value_set |= s.key == "d_value";
    }
    if !d_value_set {
        model.d_value = model.d_model / model.heads.max(1);
    }
    cfg.validate()?;
    Ok((cfg, model))
}

fn build_or_load_vocab(args: &TrainArgs, texts: &[&str]) -> Result<Vocabulary> {
    match &args.vocab {
        Some(p) => Ok(Vocabulary::load(p)?),
        None => Ok(VocabBuilder {
            min_count: args.min_count,
            merges: args.merges,
        }
        .build(texts)?),
    }
}

fn write_manifest(path: &Path, m: &RunManifest) -> Result<()> {
    write_atomic(path, serde_json::to_string_pretty(m)?.as_bytes())?;
    Ok(())
}

pub fn run(args: TrainArgs) -> Result<ExitCode> {
    if args.seeds == 0 {
        return Err(EarError::InvalidInput("--seeds must be at least 1".into()).into());
    }
    let (cfg, mut model_cfg) = resolve(&args)?;
    let full = load_dataset(&args.train, Split::Train)?;
    let mut datasets = vec![DatasetEntry {
        role: "train",
        path: args.train.clone(),
        sha256: file_sha256(&args.train)?,
        examples: full.len(),
    }];
    let (train_set, valid_set) = match &args.valid {
        Some(p) => {
            let valid = load_dataset(p, Split::Validation)?;
            datasets.push(DatasetEntry {
                role: "validation",
                path: p.clone(),
                sha256: file_sha256(p)?,
                examples: valid.len(),
            });
            (full, valid)
        }
        None => stratified_split(&full, cfg.validation_fraction, &mut stream(cfg.seed, Stream::Split))?,
    };
    let texts: Vec<&str> = train_set.texts().collect();
    let vocab = build_or_load_vocab(&args, &texts)?;
    model_cfg.vocab_size = vocab.len();
    model_cfg.max_len = cfg.max_len;
    model_cfg.validate()?;

    let out = &args.out_dir;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let vocab_path = out.join("vocab.txt");
    vocab.save(&vocab_path)?;
    let seeds: Vec<u64> = (0..args.seeds as u64).map(|k| cfg.seed + k).collect();
    let mut manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION"),
        started_at: now(),
        finished_at: None,
        config: cfg.clone(),
        config_text: cfg.to_config_string(),
        model: model_cfg.clone(),
        vocab_hash: vocab.content_hash(),
        datasets,
        seeds: seeds.clone(),
        artifacts: vec![vocab_path],
        failed_seeds: Vec::new(),
    };
    let manifest_path = out.join("manifest.json");
    write_manifest(&manifest_path, &manifest)?;
    write_atomic(&out.join("config.cfg"), cfg.to_config_string().as_bytes())?;
    log::info!(
        "training {} seed(s) on {} examples ({} validation), vocabulary {}",
        seeds.len(),
        train_set.len(),
        valid_set.len(),
        vocab.len()
    );

    let runs = run_seeds(&cfg, &model_cfg, &vocab, &train_set, &valid_set, args.seeds)?;
    for run in &runs {
        let dir = out.join(format!("seed-{}", run.seed));
        match &run.outcome {
            Ok(o) => {
                let ckpt = dir.join("best.ckpt");
                let log_path = dir.join("train_log.jsonl");
                o.checkpoint.save(&ckpt)?;
                write_atomic(&log_path, o.log.to_jsonl().as_bytes())?;
                manifest.artifacts.extend([ckpt, log_path]);
            }
            Err(e) => {
                log::error!("seed {}: {e}", run.seed);
                if let EarError::Diverged { log, .. } = e {
                    let log_path = dir.join("train_log.jsonl");
                    write_atomic(&log_path, log.to_jsonl().as_bytes())?;
                    manifest.artifacts.push(log_path);
                }
                manifest.failed_seeds.push(run.seed);
            }
        }
    }
    let summary = SeedSummary::from_runs(&runs);
    let summary_path = out.join("summary.json");
    write_atomic(&summary_path, serde_json::to_string_pretty(&summary)?.as_bytes())?;
    manifest.artifacts.push(summary_path);
    manifest.finished_at = Some(now());
    write_manifest(&manifest_path, &manifest)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    if manifest.failed_seeds.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("error: {} of {} runs failed", manifest.failed_seeds.len(), runs.len());
        Ok(ExitCode::from(1))
    }
}
