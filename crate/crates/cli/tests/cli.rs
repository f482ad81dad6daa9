use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn emosid(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emosid"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("run emosid")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// 2 speakers, 1 sentence per split, 2 repetitions: 48 utterances.
fn tiny_corpus(dir: &Path) -> PathBuf {
    let out = emosid(
        dir,
        &["synth", "--speakers", "2", "--sentences", "1", "--repetitions", "2", "--out", "corpus"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(json(&out)["utterances"], 48);
    dir.join("corpus/manifest.jsonl")
}

const FAST: &[&str] = &["--mixtures", "4", "--epochs", "10", "--hidden", "16,16"];

#[test]
fn synth_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let out = emosid(dir.path(), &["synth", "--speakers", "5", "--seed", "7", "--out", "c5"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(json(&out)["utterances"], 720);
    let v = emosid(dir.path(), &["validate-manifest", "c5/manifest.jsonl"]);
    assert!(v.status.success());
    let report = json(&v);
    assert_eq!(report["entries"], 720);
    let splits = report["protocol"]["splits"].as_array().unwrap();
    assert!(splits.iter().all(|s| s["total"] == 360 && s["full_factorial"] == true));
}

#[test]
fn validate_rejects_bad_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(
        &bad,
        r#"{"path":"a.wav","speaker_id":"s1","emotion":"bored","sentence_id":"x","repetition":1,"split":"train"}"#,
    )
    .unwrap();
    let out = emosid(dir.path(), &["validate-manifest", "bad.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("bored"), "{}", stderr(&out));
    let missing = emosid(dir.path(), &["validate-manifest", "nope.jsonl"]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn extract_empty_manifest_warns() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("empty.jsonl"), "").unwrap();
    let out = emosid(dir.path(), &["extract", "--manifest", "empty.jsonl", "--out", "feats"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(stderr(&out).to_lowercase().contains("no entries"), "{}", stderr(&out));
    assert_eq!(json(&out)["written"], 0);
    assert_eq!(std::fs::read_dir(dir.path().join("feats")).unwrap().count(), 0);
}

#[test]
fn extract_reports_bad_wav_and_skips_existing() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tiny_corpus(dir.path());
    let wav_dir = dir.path().join("corpus/wav");
    let mut wavs: Vec<_> = std::fs::read_dir(&wav_dir).unwrap().map(|e| e.unwrap().path()).collect();
    wavs.sort();
    std::fs::write(&wavs[0], b"RIFF not really").unwrap();
    let m = manifest.to_str().unwrap();

    let first = emosid(dir.path(), &["extract", "--manifest", m, "--out", "feats"]);
    assert_eq!(first.status.code(), Some(1), "{}", stderr(&first));
    let summary = json(&first);
    assert_eq!(summary["written"], 47);
    let failed = summary["failed"].as_array().unwrap();
    assert_eq!(failed.len(), 1);
    assert!(failed[0]["path"].as_str().unwrap().ends_with(wavs[0].file_name().unwrap().to_str().unwrap()));

    let again = emosid(dir.path(), &["extract", "--manifest", m, "--out", "feats"]);
    let summary = json(&again);
    assert_eq!(summary["skipped_existing"], 47);
    assert_eq!(summary["written"], 0);

    let forced = emosid(dir.path(), &["extract", "--manifest", m, "--out", "feats", "--force"]);
    assert_eq!(json(&forced)["written"], 47);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("empty.jsonl"), "").unwrap();
    std::fs::write(
        dir.path().join("run.toml"),
        "[frontend]\nframe_ms = 20.0\nhop_ms = 8.0\npre_emphasis = 0.9\n",
    )
    .unwrap();
    let out = emosid(
        dir.path(),
        &["extract", "--manifest", "empty.jsonl", "--out", "f", "--config", "run.toml", "--hop-ms", "5"],
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let fe = &json(&out)["frontend"];
    assert_eq!(fe["frame_ms"], 20.0);
    assert_eq!(fe["hop_ms"], 5.0);
    assert_eq!(fe["pre_emphasis"], 0.9);
    assert_eq!(fe["num_filters"], 26);

    std::fs::write(dir.path().join("bad.toml"), "[frontend]\nframe_mss = 1\n").unwrap();
    let bad = emosid(dir.path(), &["extract", "--manifest", "empty.jsonl", "--out", "f", "--config", "bad.toml"]);
    assert_eq!(bad.status.code(), Some(1));
    let invalid = emosid(dir.path(), &["extract", "--manifest", "empty.jsonl", "--out", "f", "--jobs", "0"]);
    assert_eq!(invalid.status.code(), Some(1));
}

#[test]
fn train_evaluate_identify() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tiny_corpus(dir.path());
    let m = manifest.to_str().unwrap();

    let mut args = vec!["train", "--manifest", m, "--out", "models", "--seed", "3"];
    args.extend_from_slice(FAST);
    let train = emosid(dir.path(), &args);
    assert!(train.status.success(), "{}", stderr(&train));
    let report = json(&train);
    assert_eq!(report["tags"], 12);
    assert_eq!(report["config"]["gmm"]["components"], 4);
    for f in ["tags.bin", "tags.json", "cascade.dnn", "mfcc.dnn", "train_report.json"] {
        assert!(dir.path().join("models").join(f).exists(), "{f}");
    }

    let eval = |extra: &[&str]| {
        let mut a = vec!["evaluate", "--manifest", m, "--models", "models"];
        a.extend_from_slice(extra);
        emosid(dir.path(), &a)
    };
    let a = eval(&["--distort", "--save-records", "trials.jsonl"]);
    let b = eval(&["--distort"]);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout, "evaluate output must be reproducible");
    let r = json(&a);
    assert_eq!(r["config"]["run"]["distortion"]["ratio"], 2.0);
    assert_eq!(r["table"]["conditions"].as_array().unwrap().len(), 2);
    assert_eq!(r["table"]["modes"].as_array().unwrap().len(), 3);

    let only = eval(&["--modes", "cascade"]);
    let r = json(&only);
    assert_eq!(r["table"]["modes"], serde_json::json!(["cascade"]));

    let rescored = emosid(dir.path(), &["evaluate", "--records", "trials.jsonl", "--compare", "gmm,cascade"]);
    assert!(rescored.status.success(), "{}", stderr(&rescored));
    assert_eq!(json(&rescored)["table"]["modes"], serde_json::json!(["gmm", "cascade"]));

    let text = eval(&["--text"]);
    assert!(String::from_utf8_lossy(&text.stdout).contains("average"));

    let wav = std::fs::read_dir(dir.path().join("corpus/wav")).unwrap().next().unwrap().unwrap().path();
    let id = emosid(dir.path(), &["identify", "--models", "models", wav.to_str().unwrap()]);
    assert!(id.status.success(), "{}", stderr(&id));
    let v = json(&id);
    for key in ["decision", "posterior", "per_segment", "tie"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    let p: f64 = v["posterior"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
    assert!((p - 1.0).abs() < 1e-9);
}

#[test]
fn staged_training_matches_roster() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tiny_corpus(dir.path());
    let m = manifest.to_str().unwrap();
    let gmm = emosid(dir.path(), &["train-gmm", "--manifest", m, "--out", "m", "--mixtures", "4", "--seed", "1"]);
    assert!(gmm.status.success(), "{}", stderr(&gmm));
    assert_eq!(json(&gmm)["tags"], 12);
    let dnn = emosid(
        dir.path(),
        &["train-dnn", "--tags", "m/tags.bin", "--manifest", m, "--hidden", "8,8", "--lr", "0.01", "--epochs", "5", "--seed", "2"],
    );
    assert!(dnn.status.success(), "{}", stderr(&dnn));
    assert_eq!(json(&dnn)["config"]["dnn"]["hidden"], serde_json::json!([8, 8]));
    assert!(dir.path().join("m/cascade.dnn").exists());
    let eval = emosid(dir.path(), &["evaluate", "--manifest", m, "--models", "m"]);
    assert!(eval.status.success(), "{}", stderr(&eval));
}

#[test]
fn missing_test_split_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tiny_corpus(dir.path());
    let text = std::fs::read_to_string(&manifest).unwrap();
    let train_only: String = text.lines().filter(|l| l.contains("\"train\"")).map(|l| format!("{l}\n")).collect();
    std::fs::write(dir.path().join("corpus/train_only.jsonl"), train_only).unwrap();
    let mut args = vec!["train", "--manifest", "corpus/train_only.jsonl", "--out", "models"];
    args.extend_from_slice(FAST);
    let train = emosid(dir.path(), &args);
    assert!(train.status.success(), "{}", stderr(&train));
    let eval = emosid(dir.path(), &["evaluate", "--manifest", "corpus/train_only.jsonl", "--models", "models"]);
    assert_eq!(eval.status.code(), Some(1));
    assert!(stderr(&eval).contains("no test entries"), "{}", stderr(&eval));
    assert!(eval.stdout.is_empty());
}

#[test]
fn divergence_is_a_runtime_failure() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = tiny_corpus(dir.path());
    let out = emosid(
        dir.path(),
        &["train", "--manifest", manifest.to_str().unwrap(), "--mixtures", "2", "--lr", "1e12", "--epochs", "5"],
    );
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("diverged"), "{}", stderr(&out));
}
