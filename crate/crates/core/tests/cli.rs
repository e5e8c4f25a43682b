use std::fs;
use std::path::Path;
use std::process::Command;

use advgen::corpus::{Passage, PassageSource};
use advgen::io::write_jsonl;
use serde_json::Value;

const PASSAGES: [(&str, &str); 2] = [
    ("p1", "The Denver Broncos defeated the Carolina Panthers 24–10 at Levi's Stadium in Santa Clara. Peyton Manning retired after the game."),
    ("p2", "Oxygen was discovered by Carl Wilhelm Scheele in Uppsala in 1773. Joseph Priestley published his findings in 1774 in London."),
];

fn advgen(args: &[&str]) -> (bool, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_advgen"))
        .args(args)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .output()
        .unwrap();
    (
        out.status.success(),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn ok(args: &[&str]) -> String {
    let (success, stdout, stderr) = advgen(args);
    assert!(success, "advgen {args:?} failed: {stderr}");
    stdout
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn stagewise_commands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ps: Vec<Passage> = PASSAGES.iter().map(|(id, t)| Passage::new(*id, *t, PassageSource::External)).collect();
    write_jsonl(d.join("passages.jsonl"), &ps).unwrap();
    write_jsonl(d.join("eval.jsonl"), &[Passage::new("e", PASSAGES[1].1, PassageSource::EvalSet)]).unwrap();

    let report: Value = serde_json::from_str(&ok(&[
        "decontaminate", "--candidates", s(&d.join("passages.jsonl")),
        "--eval", s(&d.join("eval.jsonl")), "--out-dir", s(&d.join("decon")),
    ])).unwrap();
    assert_eq!(report["dropped"], 1, "{report}");
    let kept = d.join("decon/kept.jsonl");
    assert_eq!(fs::read_to_string(&kept).unwrap().lines().count(), 1);

    ok(&["select-answers", "--passages", s(&kept), "--method", "sal", "--out", s(&d.join("cands.jsonl"))]);
    ok(&[
        "--seed", "3", "generate", "--passages", s(&kept), "--candidates", s(&d.join("cands.jsonl")),
        "--beam-size", "5", "--nbest", "2", "--out", s(&d.join("gen.jsonl")),
    ]);
    let generated = fs::read_to_string(d.join("gen.jsonl")).unwrap();
    assert!(generated.lines().count() > 0);

    let manifest: Value = serde_json::from_str(&ok(&[
        "filter", "--passages", s(&kept), "--generated", s(&d.join("gen.jsonl")),
        "--candidates", s(&d.join("cands.jsonl")), "--method", "combined", "--out-dir", s(&d.join("filtered")),
    ])).unwrap();
    let stages = manifest["stages"].as_array().unwrap();
    assert_eq!(stages[0]["input"].as_u64().unwrap() as usize, generated.lines().count());
    assert!(d.join("filtered/verdicts.jsonl").exists());
    assert!(d.join("filtered/dataset.jsonl").exists());
}

#[test]
fn checkpoint_and_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("evals.json"),
        r#"[{"id":"c1","f1":{"a":50,"b":60}},{"id":"c2","f1":{"a":58,"b":56}},{"id":"c3","f1":{"a":57,"b":57}}]"#,
    )
    .unwrap();
    let out: Value = serde_json::from_str(&ok(&["select-checkpoint", "--evals", s(&d.join("evals.json"))])).unwrap();
    assert_eq!(out["selected"], "c2");

    fs::write(d.join("syn.jsonl"), "{\"i\":0}\n{\"i\":1}\n").unwrap();
    fs::write(d.join("hum.jsonl"), "{\"i\":2}\n").unwrap();
    let syn = format!("syn={}", s(&d.join("syn.jsonl")));
    let hum = format!("hum={}", s(&d.join("hum.jsonl")));
    ok(&[
        "--seed", "1", "build-schedule", "--synthetic", &syn, "--human", &hum, "--mode", "two-stage",
        "--out", s(&d.join("sched.json")), "--materialize", s(&d.join("stages")),
    ]);
    let sched: Value = serde_json::from_str(&fs::read_to_string(d.join("sched.json")).unwrap()).unwrap();
    assert_eq!(sched["stages"].as_array().unwrap().len(), 2);
    assert_eq!(fs::read_dir(d.join("stages")).unwrap().count(), 2);
}

#[test]
fn squad_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let gold = serde_json::json!({
        "version": "1.1",
        "data": [{"title": "t", "paragraphs": [{"context": "The cat sat on the mat.", "qas": [
            {"id": "q1", "question": "Who sat?", "answers": [{"text": "The cat", "answer_start": 0}]},
            {"id": "q2", "question": "Where?", "answers": [{"text": "on the mat", "answer_start": 12}]}
        ]}]}]
    });
    fs::write(d.join("gold.json"), gold.to_string()).unwrap();
    fs::write(d.join("pred.json"), r#"{"q1":"cat","q2":"the mat"}"#).unwrap();
    let out: Value = serde_json::from_str(&ok(&[
        "evaluate", "squad", "--gold", s(&d.join("gold.json")), "--predictions", s(&d.join("pred.json")),
    ])).unwrap();
    assert!((out["em"].as_f64().unwrap() - 50.0).abs() < 1e-9, "{out}");
}

#[test]
fn errors_exit_nonzero() {
    let (success, _, stderr) = advgen(&["select-checkpoint", "--evals", "/nonexistent/evals.json"]);
    assert!(!success);
    assert!(stderr.starts_with("error:"), "{stderr}");
    let (success, _, stderr) = advgen(&["pipeline"]);
    assert!(!success);
    assert!(stderr.contains("--config"), "{stderr}");
}
