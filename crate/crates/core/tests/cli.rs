use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn komei(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_komei"))
        .args(args)
        .env_remove("KOMEI_SEED")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn gradcheck_default_passes() {
    let o = komei(&["gradcheck", "--dg", "8", "--batch", "4", "--json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    assert!(v["max_rel_err"].as_f64().unwrap() < 1e-4);
    assert_eq!(v["pass"], true);
}

#[test]
fn gradcheck_over_tolerance_exits_3() {
    let o = komei(&["gradcheck", "--tol", "1e-300"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error[check]: "));
}

#[test]
fn train_without_corpus_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.komc");
    let o = komei(&["train", "--out", p(&out)]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.starts_with("error[usage]: missing training corpus"), "{err}");
    assert!(err.contains("Usage: komei train"), "{err}");
}

#[test]
fn unknown_flags_are_rejected() {
    assert_eq!(code(&komei(&["eval", "--checkpoint", "x", "--nope"])), 1);
    assert_eq!(code(&komei(&["frobnicate"])), 1);
}

#[test]
fn help_lists_every_flag() {
    let cases: [(&str, &[&str]); 7] = [
        ("build-corpus", &["--vocab", "--sentences", "--ground-truth", "--test-sentences", "--out-dir"]),
        ("gen-synthetic", &["--scenario", "--samples", "--out-dir"]),
        ("train", &["--train", "--val", "--vocab", "--image-table", "--speech-table", "--set", "--epochs", "--lr", "--out", "--loss-curve"]),
        ("eval", &["--checkpoint", "--test", "--image-table", "--speech-table", "--expect-hash", "--predictions"]),
        ("ablate", &["--kind", "--epochs", "--out", "--set"]),
        ("gradcheck", &["--dg", "--batch", "--h", "--tol"]),
        ("dump-features", &["--checkpoint", "--samples", "--out"]),
    ];
    for (cmd, flags) in cases {
        let o = komei(&[cmd, "--help"]);
        assert_eq!(code(&o), 0, "{cmd}");
        let text = String::from_utf8_lossy(&o.stdout);
        for flag in flags.iter().chain(&["--seed", "--config", "--json"]) {
            assert!(text.contains(flag), "{cmd} help lacks {flag}");
        }
    }
}

#[test]
fn synthetic_train_eval_dump_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = komei(&["--seed", "4", "gen-synthetic", "--scenario", "image-planted", "--out-dir", p(&data)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let config = data.join("config.txt");
    for f in ["train.jsonl", "val.jsonl", "test.jsonl", "vocab.json", "ground_truth.json", "image.kome", "speech.kome"] {
        assert!(data.join(f).exists(), "{f}");
    }

    let ckpt = |name: &str| dir.path().join(name);
    let train = |out: &Path| {
        komei(&["--config", p(&config), "train", "--epochs", "3", "--set", "d_g=8", "--out", p(out)])
    };
    let o = train(&ckpt("a.komc"));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(code(&train(&ckpt("b.komc"))), 0);
    assert_eq!(fs::read(ckpt("a.komc")).unwrap(), fs::read(ckpt("b.komc")).unwrap());

    let preds = dir.path().join("pred.csv");
    let o = komei(&["--config", p(&config), "--json", "eval", "--checkpoint", p(&ckpt("a.komc")), "--predictions", p(&preds)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    for key in ["acc1", "acc2", "acc3", "n"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    let n = v["n"].as_u64().unwrap() as usize;
    assert_eq!(fs::read_to_string(&preds).unwrap().lines().count(), n + 1);

    let dump = |out: &Path| {
        komei(&[
            "--config",
            p(&config),
            "dump-features",
            "--checkpoint",
            p(&ckpt("a.komc")),
            "--samples",
            p(&data.join("test.jsonl")),
            "--out",
            p(out),
        ])
    };
    let (f1, f2) = (dir.path().join("f1.csv"), dir.path().join("f2.csv"));
    assert_eq!(code(&dump(&f1)), 0);
    assert_eq!(code(&dump(&f2)), 0);
    let text = fs::read_to_string(&f1).unwrap();
    assert_eq!(text, fs::read_to_string(&f2).unwrap());
    assert_eq!(text.lines().count(), n + 1);
    assert!(text.lines().all(|l| l.split(',').count() == 8 + 2));
}

#[test]
fn eval_hash_mismatch_and_bad_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    assert_eq!(code(&komei(&["gen-synthetic", "--samples", "40", "--out-dir", p(&data)])), 0);
    let config = data.join("config.txt");
    let ckpt = dir.path().join("m.komc");
    let o = komei(&["--config", p(&config), "train", "--epochs", "1", "--set", "d_g=4", "--out", p(&ckpt)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = komei(&["--config", p(&config), "eval", "--checkpoint", p(&ckpt), "--expect-hash", "00"]);
    assert_eq!(code(&o), 1);

    let bad = dir.path().join("bad.komc");
    fs::write(&bad, b"KOMX....").unwrap();
    let o = komei(&["--config", p(&config), "eval", "--checkpoint", p(&bad)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error[data]: "));
}

#[test]
fn seed_env_fallback_and_flag_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let run = |seed_env: Option<&str>, args: &[&str], out: &Path| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_komei"));
        c.env_remove("KOMEI_SEED");
        if let Some(s) = seed_env {
            c.env("KOMEI_SEED", s);
        }
        let mut full = args.to_vec();
        full.extend(["gen-synthetic", "--samples", "30", "--out-dir", p(out)]);
        assert!(c.args(&full).output().unwrap().status.success());
        fs::read(out.join("train.jsonl")).unwrap()
    };
    let a = run(Some("9"), &[], &dir.path().join("a"));
    let b = run(None, &["--seed", "9"], &dir.path().join("b"));
    let c = run(Some("1"), &["--seed", "9"], &dir.path().join("c"));
    let d = run(None, &[], &dir.path().join("d"));
    assert_eq!(a, b);
    assert_eq!(b, c);
    assert_ne!(a, d);
}

#[test]
fn build_corpus_from_raw_text() {
    let dir = tempfile::tempdir().unwrap();
    let vocab = dir.path().join("vocab.json");
    fs::write(
        &vocab,
        r#"{"domain":"drug","categories":["marijuana","cocaine"],"members":{"weed":"marijuana","pot":0,"coke":"cocaine"}}"#,
    )
    .unwrap();
    let sentences = dir.path().join("train.txt");
    let lines: Vec<String> = (0..10)
        .map(|i| format!("we smoked some {} on day {i}", ["weed", "pot", "coke"][i % 3]))
        .chain(["nothing to see here".to_string()])
        .collect();
    fs::write(&sentences, lines.join("\n")).unwrap();
    let gt = dir.path().join("gt.json");
    fs::write(&gt, r#"{"grass":"marijuana","snow":1}"#).unwrap();
    let test = dir.path().join("test.txt");
    fs::write(&test, "buy grass now\nlet it snow\nplain text").unwrap();
    let out = dir.path().join("out");
    let o = komei(&[
        "--json",
        "build-corpus",
        "--vocab",
        p(&vocab),
        "--sentences",
        p(&sentences),
        "--ground-truth",
        p(&gt),
        "--test-sentences",
        p(&test),
        "--out-dir",
        p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    assert_eq!((v["train"].as_u64(), v["val"].as_u64(), v["test"].as_u64()), (Some(8), Some(2), Some(2)));
    let train = fs::read_to_string(out.join("train.jsonl")).unwrap();
    assert!(train.lines().all(|l| l.matches("[MASK]").count() == 1));

    let o = komei(&["build-corpus", "--vocab", p(&vocab), "--sentences", p(&dir.path().join("absent.txt")), "--out-dir", p(&out)]);
    assert_eq!(code(&o), 2);
}
