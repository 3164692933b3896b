use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use a2net::autodiff::Tensor;
use a2net::cli::run_cli;
use a2net::data::parse_corpus;
use a2net::encoder::PrecomputedEmbeddings;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn a2net(args: &[&str]) -> Run {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("a2net").chain(args.iter().copied());
    let code = run_cli(argv, &mut out, &mut err);
    Run {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth_small(dir: &Path, name: &str, docs: usize, seed: u64) -> std::path::PathBuf {
    let path = dir.join(name);
    let r = a2net(&[
        "synth",
        "--num-docs",
        &docs.to_string(),
        "--seed",
        &seed.to_string(),
        "--vocab-size",
        "32",
        "--out",
        p(&path),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    path
}

const SMALL: [&str; 8] = ["--hidden", "8", "--dim", "8", "--epochs", "2", "--dim-pos", "4"];

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for path in [&a, &b] {
        assert_eq!(a2net(&["synth", "--num-docs", "1", "--seed", "7", "--out", p(path)]).code, 0);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(parse_corpus(&a).unwrap().len(), 1);

    let to_stdout = a2net(&["synth", "--num-docs", "1", "--seed", "7"]);
    assert_eq!(to_stdout.stdout.as_bytes(), fs::read(&a).unwrap());
}

#[test]
fn usage_errors_exit_2_and_validation_errors_exit_1() {
    let r = a2net(&["train", "--no-such-flag", "1"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("--no-such-flag"));
    assert_eq!(a2net(&["fly"]).code, 2);
    assert_eq!(a2net(&[]).code, 2);

    let r = a2net(&["synth", "--num-docs", "lots"]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("num_docs"), "{}", r.stderr);
    assert_eq!(a2net(&["train", "--ita", "sideways"]).code, 1);
    assert_eq!(a2net(&["train", "--dropout", "1.5", "--corpus", "x"]).code, 1);
    let r = a2net(&["train"]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("--corpus"));
    assert_eq!(a2net(&["eval", "--corpus", "/nonexistent.jsonl", "--checkpoint", "/nonexistent.json"]).code, 1);
    assert_eq!(a2net(&["synth", "--vocab-size", "4"]).code, 1);
}

#[test]
fn gradcheck_passes_at_small_width() {
    let r = a2net(&["gradcheck", "--seed", "3", "--dim", "16", "--hidden", "16"]);
    assert_eq!(r.code, 0, "{}", r.stdout);
    assert!(r.stdout.contains("PASS"));
}

#[test]
fn train_then_eval_reports_all_keys() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_small(dir.path(), "c.jsonl", 6, 1);
    let out = dir.path().join("run");
    let mut args = vec!["train", "--corpus", p(&corpus), "--ita", "off", "--out", p(&out)];
    args.extend(SMALL);
    let r = a2net(&args);
    assert_eq!(r.code, 0, "{}", r.stderr);
    for f in ["checkpoint.json", "train_log.jsonl", "config.txt", "metrics.json"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    assert_eq!(fs::read_to_string(out.join("train_log.jsonl")).unwrap().lines().count(), 2);
    let echo = fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(echo.contains("ita = off") && echo.contains("hidden = 8"));

    let ck = out.join("checkpoint.json");
    let r = a2net(&["eval", "--corpus", p(&corpus), "--checkpoint", p(&ck)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let v: serde_json::Value = serde_json::from_str(r.stdout.trim()).unwrap();
    let keys: BTreeSet<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
    assert_eq!(keys, BTreeSet::from(["ce", "consistency_c", "consistency_e", "ecpe", "ee"]));
    assert!(r.stderr.contains("ecpe"));
}

#[test]
fn config_file_is_overridden_by_flags_and_echo_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_small(dir.path(), "c.jsonl", 5, 2);
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "hidden = 8\ndim = 8\ndim_pos = 4\nepochs = 3\nseed = 5\n").unwrap();

    let first = dir.path().join("first");
    let r = a2net(&["train", "--config", p(&cfg), "--epochs", "1", "--corpus", p(&corpus), "--out", p(&first)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let log = fs::read_to_string(first.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 1);

    let second = dir.path().join("second");
    let echo = first.join("config.txt");
    let r = a2net(&["train", "--config", p(&echo), "--out", p(&second)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(log, fs::read_to_string(second.join("train_log.jsonl")).unwrap());

    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "colour = red\n").unwrap();
    assert_eq!(a2net(&["synth", "--config", p(&bad)]).code, 1);
}

#[test]
fn folds_manifest_partitions_the_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_small(dir.path(), "c.jsonl", 23, 3);
    let r = a2net(&["folds", "--corpus", p(&corpus), "--folds", "5", "--seed", "1"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let v: serde_json::Value = serde_json::from_str(&r.stdout).unwrap();
    let folds = v["folds"].as_array().unwrap();
    assert_eq!(folds.len(), 5);
    let mut seen = BTreeSet::new();
    for f in folds {
        let test = f["test"].as_array().unwrap();
        assert_eq!(test.len() + f["train"].as_array().unwrap().len(), 23);
        for id in test {
            assert!(seen.insert(id.as_u64().unwrap()));
        }
    }
    assert_eq!(seen.len(), 23);
    assert_eq!(a2net(&["folds", "--corpus", p(&corpus), "--folds", "30"]).code, 1);
}

#[test]
fn precomputed_embeddings_train_and_eval_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_path = synth_small(dir.path(), "c.jsonl", 4, 4);
    let corpus = parse_corpus(&corpus_path).unwrap();
    let mut emb = PrecomputedEmbeddings::new(6);
    for (k, d) in corpus.documents.iter().enumerate() {
        let data = (0..d.len() * 6).map(|i| ((i + k) % 7) as f64 / 8.0).collect();
        emb.insert(d.doc_id, Tensor::new(vec![d.len(), 6], data).unwrap()).unwrap();
    }
    let emb_path = dir.path().join("clauses.a2ne");
    emb.save(&emb_path).unwrap();

    let out = dir.path().join("run");
    let mut args = vec!["train", "--corpus", p(&corpus_path), "--embeddings", p(&emb_path), "--out", p(&out)];
    args.extend(SMALL);
    assert_eq!(a2net(&args).code, 0);
    let ck = out.join("checkpoint.json");
    let r = a2net(&["eval", "--corpus", p(&corpus_path), "--checkpoint", p(&ck), "--embeddings", p(&emb_path)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let r = a2net(&["eval", "--corpus", p(&corpus_path), "--checkpoint", p(&ck)]);
    assert_eq!(r.code, 1);
}
