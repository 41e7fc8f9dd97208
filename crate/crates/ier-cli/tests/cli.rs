//! Black-box tests of the `ier` binary.

use std::path::Path;
use std::process::{Command, Output};

fn ier(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ier"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn encode_emits_token_tag_pairs() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("corpus.txt"),
        "[IER : [ACTION-CROP : crop ] [LOCATION : the image ] ]\n",
    )
    .unwrap();
    let out = ier(&["encode", "--mode", "innermost", "corpus.txt"], dir.path());
    assert!(out.status.success());
    assert_eq!(stdout(&out), "crop\tO the\tB-LOCATION image\tI-LOCATION\n");
}

#[test]
fn synth_zero_writes_an_empty_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = ier(
        &["synth", "--n", "0", "--seed", "7", "-o", "out.txt"],
        dir.path(),
    );
    assert!(out.status.success());
    assert_eq!(
        std::fs::read_to_string(dir.path().join("out.txt")).unwrap(),
        ""
    );
}

#[test]
fn synth_is_reproducible_and_parses() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.txt", "b.txt"] {
        let out = ier(
            &["synth", "--n", "40", "--seed", "11", "-o", name],
            dir.path(),
        );
        assert!(out.status.success());
    }
    let a = std::fs::read(dir.path().join("a.txt")).unwrap();
    let b = std::fs::read(dir.path().join("b.txt")).unwrap();
    assert_eq!(a, b);

    let out = ier(&["parse", "a.txt"], dir.path());
    assert!(out.status.success());
    assert!(stdout(&out).contains("40 utterances, 0 parse errors"));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = ier(&["frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = ier(&["--help"], dir.path());
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn parse_reports_errors_and_max_errors_gates_the_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("corpus.txt"),
        "[IER : [ACTION-CROP : crop ] ]\n[IER : broken\n[IER : [FOO : x ] ]\n",
    )
    .unwrap();
    let out = ier(&["parse", "corpus.txt"], dir.path());
    assert!(
        out.status.success(),
        "default max-errors reports but continues"
    );
    assert!(stdout(&out).contains("1 utterances, 2 parse errors"));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 2"));
    assert!(stderr.contains("unknown label"));

    let out = ier(&["parse", "--max-errors", "1", "corpus.txt"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn jsonl_synth_round_trips_through_parse() {
    let dir = tempfile::tempdir().unwrap();
    let out = ier(
        &[
            "synth", "--n", "25", "--seed", "3", "--format", "jsonl", "-o", "c.jsonl",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    let out = ier(&["parse", "--format", "jsonl", "c.jsonl"], dir.path());
    assert!(out.status.success());
    assert!(stdout(&out).contains("25 utterances, 0 parse errors"));
}

#[test]
fn agreement_matches_the_hand_computed_value() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("r.csv"), "r1,r2\na,a\nb,b\na,b\nb,a\n").unwrap();
    let out = ier(&["agreement", "r.csv", "--json", "alpha.json"], dir.path());
    assert!(out.status.success());
    assert!(stdout(&out).contains("0.125000"));
    let payload: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("alpha.json")).unwrap())
            .unwrap();
    assert!((payload["alpha"].as_f64().unwrap() - 0.125).abs() < 1e-12);

    std::fs::write(dir.path().join("flat.csv"), "r1,r2\na,a\na,a\n").unwrap();
    let out = ier(&["agreement", "flat.csv"], dir.path());
    assert_eq!(
        out.status.code(),
        Some(2),
        "undefined alpha is a data error"
    );
}

#[test]
fn train_eval_predict_flow() {
    let dir = tempfile::tempdir().unwrap();
    let out = ier(
        &["synth", "--n", "250", "--seed", "5", "-o", "corpus.txt"],
        dir.path(),
    );
    assert!(out.status.success());

    let out = ier(
        &[
            "train-action",
            "corpus.txt",
            "--seed",
            "2",
            "--l2",
            "0.1",
            "-o",
            "action.json",
            "--json",
            "am.json",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(stdout(&out).contains("weighted"));

    let out = ier(
        &[
            "train-entities",
            "corpus.txt",
            "--seed",
            "2",
            "-o",
            "crf.json",
            "--json",
            "em.json",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(stdout(&out).contains("span-level"));

    for model in ["action.json", "crf.json"] {
        let text = std::fs::read_to_string(dir.path().join(model)).unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["version"], 1);
    }

    let out = ier(
        &["eval-action", "corpus.txt", "--model", "action.json"],
        dir.path(),
    );
    assert!(out.status.success());
    let out = ier(
        &[
            "eval-entities",
            "corpus.txt",
            "--model",
            "crf.json",
            "--pred-actions",
            "--action-model",
            "action.json",
        ],
        dir.path(),
    );
    assert!(out.status.success());

    std::fs::write(
        dir.path().join("req.txt"),
        "crop the image\nbrighten the contrast a bit\n",
    )
    .unwrap();
    let out = ier(
        &[
            "predict",
            "req.txt",
            "--action-model",
            "action.json",
            "--crf-model",
            "crf.json",
            "-o",
            "pred.jsonl",
        ],
        dir.path(),
    );
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let lines: Vec<String> = std::fs::read_to_string(dir.path().join("pred.jsonl"))
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect();
    assert_eq!(lines.len(), 2);
    let first: serde_json::Value = serde_json::from_str(&lines[0]).unwrap();
    assert_eq!(first["action"], "CROP");
    assert_eq!(first["entities"][0]["label"], "LOCATION");
    assert_eq!(first["entities"][0]["text"], "the image");

    // tau = 1 refuses everything
    let out = ier(
        &[
            "predict",
            "req.txt",
            "--action-model",
            "action.json",
            "--crf-model",
            "crf.json",
            "--tau",
            "1",
        ],
        dir.path(),
    );
    assert!(out.status.success());
    for line in stdout(&out).lines() {
        let value: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(value["ambiguous"], true);
    }

    // missing model file is a data error
    let out = ier(
        &[
            "predict",
            "req.txt",
            "--action-model",
            "nope.json",
            "--crf-model",
            "crf.json",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn pred_actions_requires_action_model() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("c.txt"),
        "[IER : [ACTION-CROP : crop ] it ]\n",
    )
    .unwrap();
    let out = ier(
        &[
            "eval-entities",
            "c.txt",
            "--model",
            "whatever.json",
            "--pred-actions",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1), "usage error expected");
}
