use std::path::Path;
use std::process::{Command, Output};

use lmkbqa::aspects::{assemble_sequence, AnswerAspects};
use lmkbqa::embeddings::{EmbeddingProvider, EmbeddingStore};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lmkbqa"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn toy_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["toy-data", "--output-dir", "."]);
    dir
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(run(dir.path(), &["--version"]).status.code(), Some(0));
    assert_eq!(run(dir.path(), &["no-such-command"]).status.code(), Some(1));
    assert_eq!(run(dir.path(), &["answer"]).status.code(), Some(1));
    let missing = run(dir.path(), &["build-kb", "--config", "missing.json"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));
}

#[test]
fn build_kb_summarizes_toy_graph() {
    let dir = toy_dir();
    let out = ok(dir.path(), &["build-kb", "--config", "config.json"]);
    assert!(out.starts_with("triples=61\nentities=35\n"), "{out}");
}

#[test]
fn train_answer_eval_pipeline() {
    let dir = toy_dir();
    let log = ok(dir.path(), &["train", "--config", "config.json"]);
    assert!(log.lines().all(|l| l.starts_with("epoch=")));
    assert!(dir.path().join("model.lmkw").exists());

    let answer = ok(
        dir.path(),
        &[
            "answer",
            "--config",
            "config.json",
            "--question",
            "what does jamaican people speak?",
        ],
    );
    assert_eq!(answer, "Jamaican English\n");
    assert_eq!(
        answer,
        ok(
            dir.path(),
            &[
                "answer",
                "--config",
                "config.json",
                "--question",
                "what does jamaican people speak?"
            ]
        )
    );

    let single = ok(dir.path(), &["eval", "--config", "config.json"]);
    let threaded = ok(
        dir.path(),
        &["eval", "--config", "config.json", "--threads", "3"],
    );
    assert_eq!(single, threaded);
    assert_eq!(single.lines().count(), 41);
    let last = single.lines().last().unwrap();
    let f1: f64 = last.strip_prefix("macro_f1=").unwrap().parse().unwrap();
    assert!(f1 >= 0.9, "{last}");
}

#[test]
fn seed_flag_overrides_config() {
    let dir = toy_dir();
    let a = ok(
        dir.path(),
        &[
            "train",
            "--config",
            "config.json",
            "--seed",
            "5",
            "--checkpoint",
            "a.lmkw",
        ],
    );
    let b = ok(
        dir.path(),
        &[
            "train",
            "--config",
            "config.json",
            "--seed",
            "5",
            "--checkpoint",
            "b.lmkw",
        ],
    );
    ok(
        dir.path(),
        &["train", "--config", "config.json", "--checkpoint", "c.lmkw"],
    );
    assert_eq!(a, b);
    let read = |n: &str| std::fs::read(dir.path().join(n)).unwrap();
    assert_eq!(read("a.lmkw"), read("b.lmkw"));
    assert_ne!(read("a.lmkw"), read("c.lmkw"));
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["gradcheck", "--seed", "7"]);
    assert!(out
        .lines()
        .any(|l| l.starts_with("input_proj max_rel_err=")));
    assert!(!out.contains("FAIL"));
}

#[test]
fn exported_stub_embeddings_reproduce_stub_mode() {
    let dir = toy_dir();
    let d = dir.path();
    ok(
        d,
        &[
            "export-stub-embeddings",
            "--config",
            "config.json",
            "--output",
            "emb.lmkb",
            "--manifest",
            "manifest.jsonl",
        ],
    );
    ok(
        d,
        &[
            "export-stub-embeddings",
            "--config",
            "config.json",
            "--output",
            "emb2.lmkb",
        ],
    );
    let bytes = std::fs::read(d.join("emb.lmkb")).unwrap();
    assert_eq!(bytes, std::fs::read(d.join("emb2.lmkb")).unwrap());

    let store = EmbeddingStore::from_bytes(&bytes).unwrap();
    assert_eq!(store.dim, 64);
    assert!(!store.is_empty());
    let stub = EmbeddingProvider::stub(64, 1);
    let manifest = std::fs::read_to_string(d.join("manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), store.len());
    for line in manifest.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let key = v["key"].as_str().unwrap();
        let tokens: Vec<String> = v["tokens"]
            .as_array()
            .unwrap()
            .iter()
            .map(|t| t.as_str().unwrap().to_string())
            .collect();
        assert_eq!(key, tokens.join(" "));
        let stored = &store.entries[key];
        assert_eq!(stored.nrows(), tokens.len());
        let sep = tokens.iter().position(|t| t == "<SEP>").unwrap();
        let seq = assemble_sequence(
            &tokens[1..sep],
            &AnswerAspects {
                type_tokens: vec![],
                path_tokens: vec![],
                context_tokens: tokens[sep + 1..].to_vec(),
            },
        );
        let expected = stub.embed(&seq).unwrap().mapv(|x| x as f32);
        assert_eq!(stored, &expected);
    }

    // the exported file drives the whole pipeline in file mode
    ok(d, &["train", "--config", "config.json"]);
    let mut cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("config.json")).unwrap()).unwrap();
    cfg["embedding_mode"] = "file".into();
    cfg["embedding_path"] = "emb.lmkb".into();
    std::fs::write(d.join("file.json"), cfg.to_string()).unwrap();
    let from_file = ok(d, &["eval", "--config", "file.json"]);
    let from_stub = ok(d, &["eval", "--config", "config.json"]);
    let answers = |s: &str| {
        s.lines()
            .map(|l| l.split(" predicted=").nth(1).map(String::from))
            .collect::<Vec<_>>()
    };
    assert_eq!(answers(&from_file), answers(&from_stub));
}
