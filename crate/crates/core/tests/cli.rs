use std::path::Path;
use std::process::{Command, Output};

fn namer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_namer"))
        .args(args)
        .env_remove("NAMER_VOCAB")
        .output()
        .expect("spawn namer")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn gen(dir: &Path, count: &str, noise: &str) {
    let out = namer(&[
        "gen",
        "--count",
        count,
        "--seed",
        "11",
        "--noise",
        noise,
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn parse_prints_tokens() {
    let out = namer(&["parse", "--latex", "x ^ { 2 }"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["tokens"], serde_json::json!(["x", "^", "2", "}"]));
}

#[test]
fn parse_reports_domain_errors() {
    let out = namer(&["parse", "--latex", "x ^ { 2"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn emit_strict_and_lenient() {
    let out = namer(&["emit", "--tokens", r"\frac a } b }"]);
    assert_eq!(stdout(&out).trim(), r"\frac { a } { b }");
    let out = namer(&["emit", "--tokens", "x ^ 2"]);
    assert_eq!(out.status.code(), Some(1));
    let out = namer(&["emit", "--lenient", "--tokens", "x ^ 2"]);
    assert_eq!(stdout(&out).trim(), "x ^ { 2 }");
}

#[test]
fn usage_errors() {
    assert_eq!(namer(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(namer(&[]).status.code(), Some(2));
    assert_eq!(
        namer(&["decode", "--probs", "p.namt"]).status.code(),
        Some(2)
    );
    assert_eq!(namer(&["config", "--km", "4"]).status.code(), Some(2));
    assert_eq!(namer(&["--help"]).status.code(), Some(0));
}

#[test]
fn config_file_then_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"epsilon": 0.25, "lambda": 1.0}"#).unwrap();
    let out = namer(&[
        "--config",
        cfg.to_str().unwrap(),
        "config",
        "--lambda",
        "0.75",
    ]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(
        (
            v["epsilon"].as_f64(),
            v["lambda"].as_f64(),
            v["km"].as_u64()
        ),
        (Some(0.25), Some(0.75), Some(5))
    );
}

#[test]
fn gen_then_decode_recovers_labels() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "25", "0,0,0");
    let out = namer(&["decode", "--samples", dir.path().to_str().unwrap()]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let labels = std::fs::read_to_string(dir.path().join("labels.txt")).unwrap();
    assert_eq!(stdout(&out), labels);
}

#[test]
fn gen_is_idempotent() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    gen(a.path(), "5", "0.2,0.1,0.3");
    gen(b.path(), "5", "0.2,0.1,0.3");
    for file in [
        "labels.txt",
        "manifest.json",
        "vocab.tsv",
        "00003/probs.namt",
        "00003/left.namt",
    ] {
        assert_eq!(
            std::fs::read(a.path().join(file)).unwrap(),
            std::fs::read(b.path().join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn single_decode_with_dot_and_env_vocab() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "1", "0,0,0");
    let s = dir.path().join("00000");
    let p = |f: &str| s.join(f).to_str().unwrap().to_string();
    let dot = dir.path().join("g.dot");
    let out = Command::new(env!("CARGO_BIN_EXE_namer"))
        .args([
            "decode",
            "--probs",
            &p("probs.namt"),
            "--self",
            &p("self.namt"),
        ])
        .args([
            "--left",
            &p("left.namt"),
            "--right",
            &p("right.namt"),
            "--dot",
            dot.to_str().unwrap(),
        ])
        .env("NAMER_VOCAB", dir.path().join("vocab.tsv"))
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let label = std::fs::read_to_string(s.join("label.txt")).unwrap();
    assert_eq!(stdout(&out), label);
    let dot = std::fs::read_to_string(dot).unwrap();
    assert!(dot.starts_with("digraph expr {") && dot.contains("style=bold"));
}

#[test]
fn decode_without_vocab_is_usage_error() {
    let out = namer(&[
        "decode", "--probs", "a", "--self", "b", "--left", "c", "--right", "d",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn match_reports_targets_and_losses() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "1", "0,0,0");
    let s = dir.path().join("00000");
    let p = |f: &str| s.join(f).to_str().unwrap().to_string();
    let label = std::fs::read_to_string(s.join("label.txt")).unwrap();
    let vocab = dir.path().join("vocab.tsv");
    let target = dir.path().join("target.namt");
    let out = namer(&[
        "--vocab",
        vocab.to_str().unwrap(),
        "match",
        "--probs",
        &p("probs.namt"),
        "--attn",
        &p("attn.namt"),
        "--label",
        label.trim(),
        "--target-out",
        target.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let loss = v["loss_vat"].as_f64().unwrap();
    // clean cells carry 0.9 on the target class
    assert!((loss - -(0.9f64.ln())).abs() < 1e-6, "{loss}");
    assert!(v["target"]["self_targets"].is_array());
    assert!(target.exists());
}

#[test]
fn eval_json_report() {
    let dir = tempfile::tempdir().unwrap();
    gen(dir.path(), "4", "0,0,0");
    let labels = dir.path().join("labels.txt");
    let vocab = dir.path().join("vocab.tsv");
    let out = namer(&[
        "--vocab",
        vocab.to_str().unwrap(),
        "eval",
        "--pred",
        labels.to_str().unwrap(),
        "--ref",
        labels.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(
        (v["exprate"].as_f64(), v["n"].as_u64()),
        (Some(1.0), Some(4))
    );
}

#[test]
fn vocab_from_corpus() {
    let out = namer(&[
        "vocab",
        "--corpus",
        concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/corpus.txt"),
    ]);
    let text = stdout(&out);
    assert!(text.contains("\\textcircled\thse"));
    assert!(text.contains("\\limits\tirs"));
    assert!(text.trim_end().ends_with("<eos>\teos"));
}
