use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn histtag(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_histtag"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = histtag(&["pipeline", "--config", "nope.toml"], dir.path());
    assert_eq!(missing.status.code(), Some(2));
    let bad_flag = histtag(&["vocab", "--colour"], dir.path());
    assert_eq!(bad_flag.status.code(), Some(2));
    fs::write(dir.path().join("bad.toml"), "[tagger]\nlearning_rte = 1\n").unwrap();
    let bad_key = histtag(&["ner", "train", "--config", "bad.toml"], dir.path());
    assert_eq!(bad_key.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad_key.stderr).contains("learning_rte"));
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("gold.conll"), "Wien B-LOC\nist O\n").unwrap();
    fs::write(dir.path().join("pred.conll"), "Wien B-LOC\n").unwrap();
    let out = histtag(&["eval", "--gold", "gold.conll", "--pred", "pred.conll"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn vocab_eval_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("gold.conll"), "Die O\nſtadt O\nWien B-LOC\n\nHerr O\nMaier B-PER\n").unwrap();
    fs::write(d.join("pred.conll"), "Die O O\nſtadt O O\nWien B-LOC B-LOC\n\nHerr O B-PER\nMaier B-PER I-PER\n").unwrap();

    let out = histtag(&["vocab", "--conll", "gold.conll", "-o", "vocab.txt"], d);
    assert!(out.status.success());
    let vocab = fs::read_to_string(d.join("vocab.txt")).unwrap();
    assert!(vocab.contains('ſ'));
    assert!(d.join("vocab.txt.manifest.json").is_file());

    let out = histtag(&["eval", "--gold", "gold.conll", "--pred", "pred.conll", "-o", "report.json"], d);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    assert!((report["mean_f1"].as_f64().unwrap() - 0.5).abs() < 1e-12);
    let replay = histtag(&["replay", "report.json.manifest.json"], d);
    assert!(replay.status.success());
}
