use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn srl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_srl")).args(args).output().expect("binary runs")
}

fn code(args: &[&str]) -> i32 {
    srl(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&["train", "--bogus"]), 2);
    assert_eq!(code(&["nonsense"]), 2);
    assert_eq!(code(&["--help"]), 0);
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    assert_eq!(code(&["gen-oldir", "--operator", "cubic", "--out", s(&out)]), 2);
    assert_eq!(code(&["gen-oldir", "--mix", "10,30", "--n-train", "10", "--n-test", "10", "--out", s(&out)]), 2);
}

#[test]
fn missing_inputs_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(code(&["curate-uci", "--csv", "/nonexistent/x.csv", "--target", "y", "--out", s(&out)]), 3);
    assert_eq!(code(&["train", "--dataset", "/nonexistent/dataset.json", "--out", s(&out)]), 3);
}

#[test]
fn schema_problems_exit_five() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("dataset.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let out = dir.path().join("out");
    assert_eq!(code(&["train", "--dataset", s(&bad), "--out", s(&out)]), 5);
    std::fs::write(&bad, r#"{"kind":"unknown"}"#).unwrap();
    assert_eq!(code(&["train", "--dataset", s(&bad), "--out", s(&out)]), 5);
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g");
    assert_eq!(code(&["gradcheck", "--repeats", "1", "--out", s(&out)]), 0);
    assert!(out.join("run.json").exists());
}

#[test]
fn uci_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let csv = d.join("airfoil.csv");
    assert_eq!(code(&["synth-airfoil", "--rows", "600", "--seed", "2", "--out", s(&csv)]), 0);
    let data = d.join("data");
    assert_eq!(code(&["curate-uci", "--csv", s(&csv), "--target", "sound_pressure", "--seed", "2", "--out", s(&data)]), 0);
    let dataset = data.join("dataset.json");

    let run = d.join("run");
    assert_eq!(
        code(&["train", "--dataset", s(&dataset), "--mode", "srl", "--epochs", "3", "--seed", "2", "--out", s(&run)]),
        0
    );
    for f in ["checkpoint.bin", "history.json", "surrogate.bin", "run.json"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let ck = run.join("checkpoint.bin");

    let eval = srl(&["eval", "--checkpoint", s(&ck), "--dataset", s(&dataset), "--json"]);
    assert!(eval.status.success());
    let report: Value = serde_json::from_slice(&eval.stdout).unwrap();
    assert!(report.to_string().contains("mae"));

    let emb = d.join("emb");
    assert_eq!(code(&["export", "--checkpoint", s(&ck), "--dataset", s(&dataset), "--out", s(&emb)]), 0);

    let probe = srl(&[
        "probe",
        "--embeddings",
        s(&emb.join("embeddings.bin")),
        "--epsilon",
        "0.5,0.8,0.9,0.95,0.99",
        "--points",
        "20000",
        "--json",
    ]);
    assert!(probe.status.success());
    let p: Value = serde_json::from_slice(&probe.stdout).unwrap();
    let fractions: Vec<f64> =
        p["coverage"].as_array().unwrap().iter().map(|c| c["fraction"].as_f64().unwrap()).collect();
    assert_eq!(fractions.len(), 5);
    assert!(fractions.windows(2).all(|w| w[1] <= w[0]), "{fractions:?}");
    assert!(p["few_shot_proportion"].as_f64().is_some());

    assert_eq!(code(&["probe", "--surrogate", s(&run.join("surrogate.bin")), "--epsilon", "1.5"]), 2);
    assert_eq!(code(&["eval", "--checkpoint", s(&ck), "--dataset", s(&dataset), "--split", "sideways"]), 2);

    let again = d.join("again");
    assert_eq!(code(&["replay", "--manifest", s(&run.join("run.json")), "--out", s(&again)]), 0);
    assert_eq!(std::fs::read(run.join("history.json")).unwrap(), std::fs::read(again.join("history.json")).unwrap());

    // A modified source file no longer matches the digest recorded at curation time.
    std::fs::write(&csv, "a,b\n1,2\n").unwrap();
    assert_eq!(code(&["eval", "--checkpoint", s(&ck), "--dataset", s(&dataset)]), 5);
}
