use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ear_core::EarError;

mod eval;
mod tools;
mod train;

#[derive(Parser)]
#[command(name = "ear", version, about = "Train and audit attention-entropy regularized text classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per seed and write checkpoints, logs and a run manifest.
    Train(train::TrainArgs),
    /// Score a test set and report F1 and per-identity-term AUCs.
    Eval(eval::EvalArgs),
    /// Rank corpus words by mean attention entropy, lowest first.
    ExtractTerms(tools::ExtractArgs),
    /// Fill templates with identity terms into a balanced test set.
    GenSynthetic(tools::GenArgs),
    /// Compare analytic gradients of a tiny random model with finite differences.
    Gradcheck(tools::GradcheckArgs),
    /// Print per-token attention entropies of one text as JSON.
    Profile(tools::ProfileArgs),
}

/// Checkpoint plus the vocabulary it was trained with.
#[derive(Args, Debug)]
pub struct ModelArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
}

fn init_threads() {
    let Ok(value) = std::env::var("EAR_NUM_THREADS") else {
        return;
    };
    match value.parse::<usize>() {
        Ok(n) if n > 0 => {
            if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                log::warn!("could not set thread count: {e}");
            }
        }
        _ => log::warn!("ignoring EAR_NUM_THREADS={value:?}"),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let input = err
        .chain()
        .any(|c| c.downcast_ref::<EarError>().is_some_and(EarError::is_input_error));
    if input {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    init_threads();
    let result = match cli.command {
        Command::Train(a) => train::run(a),
        Command::Eval(a) => eval::run(a),
        Command::ExtractTerms(a) => tools::extract_terms(a),
        Command::GenSynthetic(a) => tools::gen_synthetic(a),
        Command::Gradcheck(a) => tools::gradcheck(a),
        Command::Profile(a) => tools::profile(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
