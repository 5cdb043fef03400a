use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use annobert_core::{EmbeddingFile, MetricsReport};
use annobert_cli::Manifest;
use serde_json::Value;

fn annobert(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_annobert"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "info")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = r#"
runs = 2

[dataset.synthetic]
instances = 160
annotators = 6
base_rate = 0.4
seed = 1

[experiment]
preset = "annobert-ctr"
lda_iterations = 20

[experiment.model]
hidden_size = 16
encoder_layers = 1
attention_heads = 2
feature_layers = 1
ffn_size = 32
max_seq_len = 32

[experiment.ctr]
em_iterations = 10
latent_dim = 6

[experiment.train]
epochs = 1
"#;

fn setup() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    (dir, cfg)
}

fn generated(dir: &Path) -> PathBuf {
    let o = annobert(
        &["generate", "--instances", "160", "--annotators", "6", "--base-rate", "0.4", "--out-dir", "gen"],
        dir,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let o = annobert(&["preprocess", "--input", "gen/annotations.jsonl", "--out-dir", "pre"], dir);
    assert!(o.status.success(), "{}", stderr(&o));
    dir.join("pre/dataset.json")
}

#[test]
fn preprocess_reports_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(
        p.join("bad.jsonl"),
        "{\"instance_id\":\"1\",\"text\":\"hi @bob\",\"annotator_id\":\"a\",\"label\":1}\nnot json\n",
    )
    .unwrap();
    let o = annobert(&["preprocess", "--input", "bad.jsonl", "--out-dir", "out"], p);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(":2:"), "{}", stderr(&o));

    fs::write(p.join("empty.jsonl"), "").unwrap();
    let o = annobert(&["preprocess", "--input", "empty.jsonl", "--out-dir", "out"], p);
    assert_eq!(o.status.code(), Some(2));

    generated(p);
    let m: Manifest = serde_json::from_str(&fs::read_to_string(p.join("pre/manifest.json")).unwrap()).unwrap();
    assert_eq!(m.artifacts, ["dataset.json"]);
}

#[test]
fn fit_embeddings_dim_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    generated(p);
    let fit = |out: &str, dim: &str| {
        annobert(
            &[
                "fit-embeddings", "--dataset", "pre/dataset.json", "--source", "ctr", "--dim", dim, "--em-iters", "15",
                "--lda-iters", "20", "--out-dir", out,
            ],
            p,
        )
    };
    let o = fit("a", "10");
    assert!(o.status.success(), "{}", stderr(&o));
    let file = EmbeddingFile::load(p.join("a/embeddings.json")).unwrap();
    assert_eq!(file.dim, 10);
    assert!(file.vectors.iter().all(|v| v.len() == 10));
    let trace: Vec<f64> = serde_json::from_str(&fs::read_to_string(p.join("a/objective_trace.json")).unwrap()).unwrap();
    assert_eq!(trace.len(), 15);

    assert!(fit("b", "10").status.success());
    assert_eq!(fs::read(p.join("a/embeddings.json")).unwrap(), fs::read(p.join("b/embeddings.json")).unwrap());

    let o = fit("c", "4");
    assert_eq!(o.status.code(), Some(1));
    assert!(!p.join("c").exists(), "validation must precede any work");
}

#[test]
fn train_eval_reports_and_reproduces() {
    let (dir, cfg) = setup();
    let p = dir.path();
    let cfg = cfg.to_str().unwrap();
    let run = |out: &str| annobert(&["train-eval", "--config", cfg, "--out-dir", out], p);
    let o = run("one");
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(run("two").status.success());
    let report: MetricsReport =
        serde_json::from_str(&fs::read_to_string(p.join("one/report_overall.json")).unwrap()).unwrap();
    assert_eq!(report.runs.len(), 2);
    assert_eq!(report.seeds, vec![0, 1]);
    for f in ["report_overall.json", "experiment.json", "report.txt"] {
        assert_eq!(fs::read(p.join("one").join(f)).unwrap(), fs::read(p.join("two").join(f)).unwrap(), "{f}");
    }
    let strip = |d: &str| {
        let mut v: Value = serde_json::from_str(&fs::read_to_string(p.join(d).join("manifest.json")).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("metadata");
        v["config"].as_object_mut().unwrap().remove("out_dir");
        v
    };
    assert_eq!(strip("one"), strip("two"));
}

#[test]
fn baseline_logs_no_annotator_use() {
    let (dir, cfg) = setup();
    let o = annobert(
        &["train-eval", "--config", cfg.to_str().unwrap(), "--preset", "baseline", "--out-dir", "b"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("no annotator embeddings and no label text are used"));
}

#[test]
fn usage_errors_exit_one_before_work() {
    let (dir, cfg) = setup();
    let p = dir.path();
    let cfg = cfg.to_str().unwrap();
    let o = annobert(&["train-eval", "--config", cfg, "--preset", "magic", "--out-dir", "x"], p);
    assert_eq!(o.status.code(), Some(1));
    let o = annobert(&["train-eval", "--config", cfg, "--runs", "1", "--out-dir", "x"], p);
    assert_eq!(o.status.code(), Some(1));
    let o = annobert(&["train-eval", "--config", cfg, "--pooling", "median", "--out-dir", "x"], p);
    assert_eq!(o.status.code(), Some(1));
    let o = annobert(&["train-eval", "--config", cfg, "--label-preset", "nope", "--out-dir", "x"], p);
    assert_eq!(o.status.code(), Some(1));
    assert!(!p.join("x").exists());
    let o = annobert(&["frobnicate"], p);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn analyze_compares_embedding_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    generated(p);
    for (src, out) in [("ctr", "ctr"), ("history", "hist")] {
        let o = annobert(
            &[
                "fit-embeddings", "--dataset", "pre/dataset.json", "--source", src, "--dim", "6", "--em-iters", "10",
                "--lda-iters", "20", "--out-dir", out,
            ],
            p,
        );
        assert!(o.status.success(), "{}", stderr(&o));
    }
    fs::rename(p.join("ctr/embeddings.json"), p.join("ctr/ctr.json")).unwrap();
    fs::rename(p.join("hist/embeddings.json"), p.join("hist/history.json")).unwrap();
    let o = annobert(
        &[
            "analyze", "--dataset", "pre/dataset.json", "--embeddings", "ctr/ctr.json", "--embeddings",
            "hist/history.json", "--out-dir", "deep/analysis",
        ],
        p,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let out = p.join("deep/analysis");
    for f in ["ctr_pca.svg", "ctr_kappa_cosine.json", "history_pca.json", "history_kappa_cosine.svg"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let cmp: Value = serde_json::from_str(&fs::read_to_string(out.join("comparison.json")).unwrap()).unwrap();
    let rows = cmp["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r["pearson_r"].as_f64().unwrap().abs() <= 1.0));
}

#[test]
fn analyze_single_annotator_data_is_unavailable() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let lines: String = (0..6)
        .map(|i| {
            format!(
                "{{\"instance_id\":\"{i}\",\"text\":\"t {i}\",\"annotator_id\":\"a{}\",\"label\":{}}}\n",
                i % 3,
                i % 2
            )
        })
        .collect();
    fs::write(p.join("single.jsonl"), lines).unwrap();
    let emb = r#"{"source":"learnt","dim":2,"frozen":false,"annotator_ids":["a0","a1","a2"],"vectors":[[1,0],[0,1],[1,1]]}"#;
    fs::write(p.join("emb.json"), emb).unwrap();
    let o = annobert(
        &["analyze", "--dataset", "single.jsonl", "--embeddings", "emb.json", "--out-dir", "an"],
        p,
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("analysis unavailable"), "{}", stderr(&o));
}
