#[path = "common/protocol_server.rs"]
mod protocol_server;

use std::path::Path;
use std::process::{Command, Output};
use std::sync::Arc;

use entrorag::{MockBackend, MockModelSpec};
use serde_json::Value;

fn entrorag(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_entrorag"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("run entrorag")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8(out.stderr.clone()).unwrap();
    let line = text.lines().last().expect("stderr is empty");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr {text:?}: {e}"))
}

/// A planted fixture with `n` examples of `k` documents in a fresh directory.
fn fixture(n: usize, k: usize, extra: &[&str]) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let (n, k) = (n.to_string(), k.to_string());
    let mut args = vec!["fixture", "--examples", &n, "--documents", &k, "--seed", "5", "--out", "."];
    args.extend_from_slice(extra);
    let out = entrorag(&args, dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir
}

fn first_question(dir: &Path) -> String {
    let line = std::fs::read_to_string(dir.join("dataset.jsonl")).unwrap();
    let ex: Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
    ex["question"].as_str().unwrap().to_string()
}

fn decode_json(dir: &Path, extra: &[&str]) -> Value {
    let q = first_question(dir);
    let mut args = vec!["decode", "--mock-spec", "mock.json", "--docs", "docs.jsonl", "--question", &q];
    args.extend_from_slice(extra);
    let out = entrorag(&args, dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_str(&stdout(&out)).unwrap()
}

#[test]
fn missing_question_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = entrorag(&["decode", "--method", "leens"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"]["kind"], "usage");

    let out = entrorag(&["decode", "--no-such-flag"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"]["kind"], "usage");

    let out = entrorag(&["eval", "--dataset", "d.jsonl", "--tau", "-1", "--method", "nonsense"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn decode_prints_result_with_resolved_config() {
    let dir = fixture(1, 5, &[]);
    let v = decode_json(dir.path(), &["--method", "leens", "--tau", "0.1", "--seed", "5", "--trace"]);
    assert_eq!(v["result"]["answer"], "Paris");
    assert_eq!(v["config"]["decode"]["method"], "leens");
    assert_eq!(v["config"]["decode"]["tau"], 0.1);
    assert_eq!(v["config"]["backend_meta"]["num_layers"], 8);
    assert!(!v["result"]["trace"].as_array().unwrap().is_empty());
}

#[test]
fn clehe_with_zero_beta_answers_like_leens() {
    let dir = fixture(1, 5, &[]);
    let leens = decode_json(dir.path(), &["--method", "leens"]);
    let clehe = decode_json(dir.path(), &["--method", "clehe", "--beta", "0"]);
    assert_eq!(leens["result"]["answer"], clehe["result"]["answer"]);
    assert_eq!(leens["result"]["tokens"], clehe["result"]["tokens"]);
}

#[test]
fn replug_without_scores_fails() {
    let dir = fixture(1, 3, &[]);
    let docs = std::fs::read_to_string(dir.path().join("docs.jsonl")).unwrap();
    let stripped: String = docs
        .lines()
        .map(|l| {
            let mut v: Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("score");
            format!("{v}\n")
        })
        .collect();
    std::fs::write(dir.path().join("docs.jsonl"), stripped).unwrap();
    let q = first_question(dir.path());
    let out = entrorag(
        &["decode", "--method", "replug", "--mock-spec", "mock.json", "--docs", "docs.jsonl", "--question", &q],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_json(&out);
    assert_eq!(err["error"]["kind"], "runtime");
    assert!(err["error"]["message"].as_str().unwrap().contains("score"));
}

#[test]
fn eval_is_byte_identical_across_runs() {
    let dir = fixture(8, 5, &[]);
    let run = |out_dir: &str, parallelism: &str| {
        let out = entrorag(
            &[
                "eval", "--dataset", "dataset.jsonl", "--mock-spec", "mock.json", "--method", "clehe",
                "--top-k", "5", "--parallelism", parallelism, "--out", out_dir, "--trace",
            ],
            dir.path(),
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert!(stdout(&out).starts_with("EM 100.00"), "{}", stdout(&out));
        std::fs::read(dir.path().join(out_dir).join("records.jsonl")).unwrap()
    };
    let a = run("a", "1");
    let b = run("b", "4");
    assert_eq!(a, b);
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 8);
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("a/report.json")).unwrap()).unwrap();
    assert_eq!(report["aggregate"]["em"], 100.0);
    assert_eq!(report["config"]["decode"]["method"], "clehe");
    assert!(dir.path().join("a/traces.jsonl").exists());
}

#[test]
fn eval_reports_ingestion_line_numbers() {
    let dir = fixture(2, 3, &[]);
    let mut text = std::fs::read_to_string(dir.path().join("dataset.jsonl")).unwrap();
    text.push_str("{\"id\": \"broken\"\n");
    std::fs::write(dir.path().join("dataset.jsonl"), text).unwrap();
    let out = entrorag(&["eval", "--dataset", "dataset.jsonl", "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let msg = stderr_json(&out)["error"]["message"].as_str().unwrap().to_string();
    assert!(msg.contains("line 3"), "{msg}");
}

#[test]
fn sweep_writes_one_row_per_position() {
    let dir = fixture(4, 10, &["--recall-window", "160"]);
    let sweep = |method: &str| {
        let out = entrorag(
            &["sweep", "--dataset", "dataset.jsonl", "--mock-spec", "mock.json", "--top-k", "10", "--method", method],
            dir.path(),
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let text = stdout(&out);
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# config="));
        assert_eq!(lines.next().unwrap(), "position,em,n");
        lines
            .map(|l| l.split(',').nth(1).unwrap().to_string())
            .collect::<Vec<String>>()
    };
    let leens = sweep("leens");
    assert_eq!(leens.len(), 10);
    assert!(leens.iter().all(|em| em == "100.00"));
    let naive = sweep("naive");
    assert_eq!(naive.len(), 10);
    assert_eq!(naive[0], "100.00");
    assert_eq!(naive[5], "0.00");
}

#[test]
fn analyze_outputs() {
    let dir = fixture(6, 4, &[]);
    let run = |args: &[&str]| {
        let mut full = vec!["analyze"];
        full.extend_from_slice(args);
        full.extend_from_slice(&["--dataset", "dataset.jsonl", "--mock-spec", "mock.json"]);
        let out = entrorag(&full, dir.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        stdout(&out).lines().skip(2).map(str::to_string).collect::<Vec<_>>()
    };
    let gaps = run(&["entropy-gap", "--raw"]);
    assert_eq!(gaps.len(), 6);
    assert!(gaps.iter().all(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap() < 0.0));
    let bins = run(&["entropy-gap", "--bins", "4"]);
    assert_eq!(bins.len(), 4);
    assert_eq!(run(&["score-gap", "--raw"]).len(), 6);
    let profile = run(&["layer-profile", "--layers", "2,4,6,8"]);
    assert_eq!(profile.len(), 4);
    assert!(profile[0].starts_with("2,"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = fixture(1, 3, &[]);
    std::fs::write(
        dir.path().join("run.toml"),
        "method = \"clehe\"\nbeta = 5.0\nlayers = \"5-8\"\nmock_spec = \"mock.json\"\n[template]\ninstruction = \"Answer from the documents.\"\n",
    )
    .unwrap();
    let v = decode_json(dir.path(), &["--config", "run.toml", "--beta", "0.5"]);
    let decode = &v["config"]["decode"];
    assert_eq!(decode["method"], "clehe");
    assert_eq!(decode["beta"], 0.5);
    assert_eq!(decode["layer_strategy"]["candidate_layers"], serde_json::json!([5, 6, 7, 8]));
    assert_eq!(decode["template"]["instruction"], "Answer from the documents.");

    std::fs::write(dir.path().join("bad.toml"), "temperature = 2\n").unwrap();
    let out = entrorag(&["eval", "--config", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn preset_layers_are_checked_against_the_model() {
    let dir = fixture(1, 3, &[]);
    let q = first_question(dir.path());
    let out = entrorag(
        &["decode", "--preset", "llama2-7b", "--method", "clehe", "--mock-spec", "mock.json", "--docs", "docs.jsonl", "--question", &q],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_json(&out)["error"]["message"].as_str().unwrap().contains("layer"));
}

#[test]
fn decode_over_the_remote_protocol() {
    let dir = fixture(1, 4, &[]);
    let spec: MockModelSpec =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("mock.json")).unwrap()).unwrap();
    let server = protocol_server::ProtocolServer::start(Arc::new(MockBackend::new(spec).unwrap()));
    let q = first_question(dir.path());
    let out = entrorag(
        &["decode", "--backend", "remote", "--base-url", &server.url, "--docs", "docs.jsonl", "--question", &q],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["result"]["answer"], "Paris");
    assert_eq!(v["config"]["backend"]["kind"], "remote");

    let out = entrorag(
        &["decode", "--backend", "remote", "--base-url", "http://127.0.0.1:9", "--docs", "docs.jsonl", "--question", &q],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
}
