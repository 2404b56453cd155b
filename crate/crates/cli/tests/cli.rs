use std::io::Write;
use std::path::Path;
use std::process::{Command, Output};

use debias_core::fixtures::{planted_pairs, topic_band_corpus, write_corpus};

fn debias(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_debias"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "debias {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn end_to_end_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let articles = write_corpus(&corpus, &topic_band_corpus(4, false, 2)).unwrap();
    let pairs_path = dir.path().join("pairs.tsv");
    let mut f = std::fs::File::create(&pairs_path).unwrap();
    for p in planted_pairs(150, 5) {
        writeln!(f, "{}\t{}\t{}", p.id, p.biased_text(), p.neutral_text()).unwrap();
    }
    writeln!(f, "same\tthe vote\tthe vote").unwrap();
    drop(f);

    let listing = dir.path().join("corpus/articles.jsonl");
    assert!(stdout(&debias(&["corpus", "validate", s(&listing)])).contains("24 articles, 3 sources"));
    let table = stdout(&debias(&["corpus", "score-table", s(&listing)]));
    assert_eq!(table.lines().collect::<Vec<_>>(), ["outlet0\t-0.7", "outlet1\t0", "outlet2\t0.7"]);

    let models = dir.path().join("models");
    debias(&["pipeline", "train", "--corpus", s(&corpus), "--pairs", s(&pairs_path), "--out", s(&models), "--tiny"]);

    let probs = stdout(&debias(&[
        "textbias", "predict", "--model", s(&models.join("tagger.json")), "--text", "john exposed the plan",
    ]));
    assert_eq!(probs.lines().count(), 4);
    let bands = stdout(&debias(&[
        "textbias", "predict", "--model", s(&models.join("tagger.json")), "--text", "john exposed the plan",
        "--format", "bands",
    ]));
    assert_eq!(bands.lines().filter(|l| l.ends_with("\tmax")).count(), 1);

    let run: serde_json::Value = serde_json::from_slice(
        &debias(&["neutralize", "run", "--model", s(&models), "--text", "john exposed the plan"]).stdout,
    )
    .unwrap();
    assert!(!run["replacements"].as_array().unwrap().is_empty());

    let inspect = stdout(&debias(&["space", "inspect", "--table", s(&models.join("table.emb")), "--stats"]));
    assert!(inspect.contains("image: 24"), "{inspect}");

    let hits: serde_json::Value = serde_json::from_slice(
        &debias(&["retrieve", "--index", s(&models), "--text", &articles[0].text, "-k", "3"]).stdout,
    )
    .unwrap();
    assert_eq!(hits["results"].as_array().unwrap().len(), 3);

    let testset = dir.path().join("test.jsonl");
    std::fs::write(
        &testset,
        articles
            .iter()
            .take(4)
            .map(|a| format!("{{\"text\":\"{}\",\"original_bias\":{}}}\n", a.text, a.source_score.value()))
            .collect::<String>(),
    )
    .unwrap();
    let metrics: serde_json::Value =
        serde_json::from_slice(&debias(&["retrieve", "eval", "--index", s(&models), "--testset", s(&testset)]).stdout)
            .unwrap();
    assert_eq!(metrics["n"], 4);
    assert!((0.0..=1.0).contains(&metrics["avg_bias"].as_f64().unwrap()));

    let article = dir.path().join("corpus/one.json");
    std::fs::write(&article, serde_json::to_string(&articles[20]).unwrap()).unwrap();
    let debiased = dir.path().join("one.out.json");
    debias(&["pipeline", "run", "--article", s(&article), "--models", s(&models), "--out", s(&debiased)]);
    let one: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&debiased).unwrap()).unwrap();
    assert_eq!(one["trace"].as_array().unwrap().len(), 4);

    let batch = dir.path().join("batch.jsonl");
    debias(&["pipeline", "batch", "--corpus", s(&corpus), "--models", s(&models), "--out", s(&batch)]);
    let lines: Vec<String> = std::fs::read_to_string(&batch).unwrap().lines().map(String::from).collect();
    assert_eq!(lines.len(), 24);
    let first: serde_json::Value = serde_json::from_str(&lines[0]).unwrap();
    assert_eq!(first["original"]["id"], articles[0].id);

    let pairs_out = dir.path().join("eval_pairs.jsonl");
    debias(&[
        "eval-sample", "--batch", s(&batch), "--corpus", s(&corpus), "-n", "5", "--seed", "1", "--out", s(&pairs_out),
    ]);
    assert_eq!(std::fs::read_to_string(&pairs_out).unwrap().lines().count(), 5);

    let report: serde_json::Value = serde_json::from_slice(
        &debias(&["eval-report", "--store", s(&dir.path().join("judgments.jsonl"))]).stdout,
    )
    .unwrap();
    assert_eq!(report["n"], 0);
    assert!(report["mean_fluency"].is_null());
}

#[test]
fn neutralize_eval_reports_mean_cosine() {
    let dir = tempfile::tempdir().unwrap();
    let vectors = dir.path().join("vec.txt");
    std::fs::write(&vectors, "3 2\na 1 0\nb 0 1\nc 1 1\n").unwrap();
    let pairs = dir.path().join("words.tsv");
    std::fs::write(&pairs, "a\ta\na\tb\nzz\ta\n").unwrap();
    let report: serde_json::Value =
        serde_json::from_slice(&debias(&["neutralize", "eval", "--pairs", s(&pairs), "--vectors", s(&vectors)]).stdout)
            .unwrap();
    assert_eq!(report["mean_cosine"], 0.5);
    assert_eq!(report["oov_count"], 1);
}

#[test]
fn invalid_input_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{not json}\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_debias"))
        .args(["corpus", "validate", s(&bad)])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}
