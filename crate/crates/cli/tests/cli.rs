use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn ear(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ear"))
        .args(args)
        .env("EAR_NUM_THREADS", "1")
        .output()
        .expect("run ear")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const ADJ: [&str; 6] = ["kind", "awful", "smart", "vile", "calm", "nasty"];
const NOUNS: [&str; 6] = ["people", "folks", "neighbours", "friends", "crowds", "teams"];

/// Small two-class corpus: even rows benign, odd rows hateful.
fn write_corpus(path: &Path, n: usize) {
    let mut text = String::from("text\tlabel\n");
    for i in 0..n {
        let label = i % 2;
        let adj = ADJ[2 * (i / 2 % 3) + label];
        let noun = NOUNS[i / 6 % NOUNS.len()];
        let verb = if label == 1 { "hate" } else { "like" };
        text.push_str(&format!("i {verb} those {adj} {noun}\t{label}\n"));
    }
    fs::write(path, text).unwrap();
}

fn write_synthetic(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let templates = dir.join("templates.tsv");
    fs::write(&templates, "template\tlabel\ni hate all {}\t1\ni like all {}\t0\n").unwrap();
    let terms = dir.join("terms.txt");
    fs::write(&terms, "people\nfolks\nfriends\n").unwrap();
    let out = dir.join("synthetic.tsv");
    ok(&ear(&["gen-synthetic", "--templates", s(&templates), "--terms", s(&terms), "--out", s(&out)]));
    let sidecar = PathBuf::from(format!("{}.terms.tsv", out.display()));
    (out, sidecar, terms)
}

fn train(dir: &Path, alpha: &str) -> PathBuf {
    let data = dir.join("train.tsv");
    write_corpus(&data, 120);
    let run = dir.join(format!("run-{alpha}"));
    ok(&ear(&[
        "train", "--train", s(&data), "--out-dir", s(&run), "--alpha", alpha, "--layers", "1", "--heads", "2",
        "--d-model", "8", "--d-ff", "16", "--max-epochs", "3", "--learning-rate", "1e-2", "--batch-size", "16",
    ]));
    run
}

fn model_args(run: &Path) -> Vec<String> {
    vec![
        "--checkpoint".into(),
        run.join("seed-0/best.ckpt").display().to_string(),
        "--vocab".into(),
        run.join("vocab.txt").display().to_string(),
    ]
}

fn log_lines(run: &Path) -> Vec<Value> {
    fs::read_to_string(run.join("seed-0/train_log.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn train_writes_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let run = train(dir.path(), "0.01");
    for f in ["seed-0/best.ckpt", "seed-0/train_log.jsonl", "manifest.json", "summary.json", "vocab.txt", "config.cfg"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let manifest: Value = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest["finished_at"].as_u64() >= manifest["started_at"].as_u64());
    assert!(manifest["finished_at"].is_u64());
    let lines = log_lines(&run);
    assert_eq!(lines.len(), 4);
    assert!(lines[0]["train"]["regularization"].as_f64().unwrap() < 0.0);
}

#[test]
fn alpha_zero_logs_zero_regularization() {
    let dir = tempfile::tempdir().unwrap();
    let run = train(dir.path(), "0");
    let lines = log_lines(&run);
    for l in &lines[..lines.len() - 1] {
        assert_eq!(l["train"]["regularization"].as_f64(), Some(0.0));
        assert_eq!(l["valid"]["regularization"].as_f64(), Some(0.0));
    }
}

#[test]
fn missing_input_exits_two_and_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere.tsv");
    let out = ear(&["train", "--train", s(&missing), "--out-dir", s(&dir.path().join("r"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.tsv"));
}

#[test]
fn unknown_config_key_is_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("train.tsv");
    write_corpus(&data, 20);
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "alpha = 0.01\nbogus = 3\n").unwrap();
    let out = ear(&["train", "--config", s(&cfg), "--train", s(&data), "--out-dir", s(&dir.path().join("r"))]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bogus") && err.contains(":2"), "{err}");
}

#[test]
fn gen_synthetic_writes_dataset_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let (data, sidecar, _) = write_synthetic(dir.path());
    let rows: Vec<String> = fs::read_to_string(&data).unwrap().lines().skip(1).map(String::from).collect();
    assert_eq!(rows.len(), 6);
    assert_eq!(rows.iter().filter(|r| r.ends_with("\t1")).count(), 3);
    let side = fs::read_to_string(&sidecar).unwrap();
    assert_eq!(side.lines().next(), Some("id\tterm"));
    assert_eq!(side.lines().count(), 7);
}

#[test]
fn unbalanced_templates_need_flag() {
    let dir = tempfile::tempdir().unwrap();
    let templates = dir.path().join("t.tsv");
    fs::write(&templates, "a {} b\t1\nc {} d\t1\ne {} f\t0\n").unwrap();
    let terms = dir.path().join("terms.txt");
    fs::write(&terms, "x\n").unwrap();
    let out = dir.path().join("o.tsv");
    let base = ["gen-synthetic", "--templates", s(&templates), "--terms", s(&terms), "--out", s(&out)];
    assert_eq!(ear(&base).status.code(), Some(2));
    let mut flagged = base.to_vec();
    flagged.push("--allow-unbalanced");
    ok(&ear(&flagged));
}

#[test]
fn eval_reports_per_term_aucs_and_significance() {
    let dir = tempfile::tempdir().unwrap();
    let run = train(dir.path(), "0.01");
    let (synthetic, sidecar, terms) = write_synthetic(dir.path());
    let test = dir.path().join("train.tsv");
    let out = dir.path().join("eval");
    let mut args = vec!["eval".to_string()];
    args.extend(model_args(&run));
    for a in ["--test", s(&test), "--synthetic", s(&synthetic), "--membership", s(&sidecar), "--terms", s(&terms)] {
        args.push(a.into());
    }
    args.extend(["--out-dir".into(), out.display().to_string()]);
    let argv: Vec<&str> = args.iter().map(String::as_str).collect();
    ok(&ear(&argv));

    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let per_term = report["bias"]["terms"].as_array().unwrap();
    assert_eq!(per_term.len(), 3);
    for t in per_term {
        for k in ["auc_subgroup", "auc_bpsn", "auc_bnsp"] {
            let v = t[k].as_f64().unwrap();
            assert!((0.0..=1.0).contains(&v), "{k} = {v}");
        }
    }
    assert!(report.get("significance").is_none());
    assert_eq!(fs::read_to_string(out.join("bias_terms.csv")).unwrap().lines().count(), 4);

    // Against its own scores the model is indistinguishable from the baseline.
    let baseline = out.join("test_scores.tsv");
    let out2 = dir.path().join("eval2");
    let mut args2: Vec<String> = vec!["eval".into()];
    args2.extend(model_args(&run));
    for a in ["--test", s(&test), "--baseline-scores", s(&baseline), "--out-dir", s(&out2)] {
        args2.push(a.into());
    }
    let argv2: Vec<&str> = args2.iter().map(String::as_str).collect();
    ok(&ear(&argv2));
    let report: Value = serde_json::from_str(&fs::read_to_string(out2.join("report.json")).unwrap()).unwrap();
    let sig = &report["significance"];
    assert_eq!(sig["p_f1_weighted"].as_f64(), Some(0.5));
    assert_eq!(sig["p_f1_hate"].as_f64(), Some(0.5));
}

#[test]
fn eval_rejects_foreign_vocabulary() {
    let dir = tempfile::tempdir().unwrap();
    let run = train(dir.path(), "0.01");
    let other = dir.path().join("other_vocab.txt");
    let text = fs::read_to_string(run.join("vocab.txt")).unwrap();
    fs::write(&other, format!("{text}extra\n")).unwrap();
    let ckpt = run.join("seed-0/best.ckpt");
    let test = dir.path().join("train.tsv");
    let out = ear(&[
        "eval", "--checkpoint", s(&ckpt), "--vocab", s(&other), "--test", s(&test), "--out-dir",
        s(&dir.path().join("e")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn extract_terms_top_k_sorted() {
    let dir = tempfile::tempdir().unwrap();
    let run = train(dir.path(), "0");
    let corpus = dir.path().join("train.tsv");
    let mut args: Vec<String> = vec!["extract-terms".into()];
    args.extend(model_args(&run));
    args.extend(["--corpus".into(), s(&corpus).into(), "--top-k".into(), "10".into()]);
    let argv: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = ear(&argv);
    ok(&out);
    let csv = String::from_utf8(out.stdout).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("term,mean_entropy,count,doc_freq,hate_corr"));
    let ents: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(ents.len(), 10);
    assert!(ents.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn gradcheck_passes() {
    let out = ear(&["gradcheck"]);
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("ok:"));
}
