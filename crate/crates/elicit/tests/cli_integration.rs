//! Command-level integration tests: artifacts, exit codes, audit and
//! interview behavior, and the regime report files.

mod common;

use std::io::Cursor;
use std::path::Path;
use std::process::Command;

use common::{fast_config, tiny_bank};
use elicit::cli::{cmd_audit, cmd_interview, cmd_train, CliError, InterviewMode};
use elicit::evalkit::{regime_report, EvalError, METRICS_CSV_HEADER};
use elicit::simulator::{ResponseSimulator, Simulator};
use elicit::trainer::{Regime, TrainConfig};

fn quick_desk(epochs: u64) -> TrainConfig {
    TrainConfig {
        epochs,
        ..TrainConfig::desk()
    }
}

#[test]
fn train_writes_metrics_checkpoints_and_audit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_desk(5);
    let mut log = Vec::new();
    let summary = cmd_train(&cfg, dir.path(), &mut log).unwrap();

    let metrics = std::fs::read_to_string(&summary.metrics_path).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], METRICS_CSV_HEADER);
    assert_eq!(lines.len(), 6, "header plus one row per epoch");

    let checkpoints: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| {
            e.file_name()
                .to_string_lossy()
                .starts_with("checkpoint_epoch_")
        })
        .collect();
    assert!(!checkpoints.is_empty(), "at least one per-pass checkpoint");
    assert!(summary.final_checkpoint.exists());
    assert!(dir.path().join("final_audit.json").exists());
}

#[test]
fn paper_profile_logs_the_published_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = TrainConfig::paper();
    cfg.epochs = 1;
    let mut log = Vec::new();
    // The run may or may not pass its single calibration; only the logged
    // threshold matters here.
    match cmd_train(&cfg, dir.path(), &mut log) {
        Ok(_) | Err(CliError::CalibrationExhausted) => {}
        Err(e) => panic!("unexpected error: {e}"),
    }
    let text = String::from_utf8(log).unwrap();
    assert!(
        text.contains("tau = 156072"),
        "expected the 156072-sample threshold in: {text}"
    );
}

fn write_personas(path: &Path, sim: &Simulator, count: u64, seed0: u64) {
    use std::io::Write;
    let mut f = std::fs::File::create(path).unwrap();
    for k in 0..count {
        let p = sim.sample_persona(seed0 + k);
        let line = serde_json::json!({
            "id": p.id,
            "skills": p.true_skills.iter().collect::<Vec<_>>(),
            "traits": p.traits,
            "seed": p.seed,
        });
        writeln!(f, "{line}").unwrap();
    }
}

#[test]
fn audit_command_passes_on_a_trained_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_desk(40);
    let mut log = Vec::new();
    let summary = cmd_train(&cfg, dir.path(), &mut log).unwrap();

    let sim = Simulator::new(
        elicit::question_bank::QuestionBank::default_bank().clone(),
        cfg.sim_config(),
    );
    let personas = dir.path().join("personas.jsonl");
    write_personas(&personas, &sim, 2000, 9_000_000);

    let mut out = Vec::new();
    let report = cmd_audit(&summary.final_checkpoint, &personas, 0.1, &mut out).unwrap();
    assert!(
        report.passed,
        "trained checkpoint should audit clean at eps 0.1, got sup_abs {}",
        report.sup_abs
    );
    let printed: serde_json::Value = serde_json::from_slice(&out).unwrap();
    assert_eq!(printed["passed"], serde_json::Value::Bool(true));
    assert_eq!(printed["per_c"].as_array().unwrap().len(), 6);

    // Zero tolerance fails on any nondegenerate data.
    let mut out = Vec::new();
    let report = cmd_audit(&summary.final_checkpoint, &personas, 0.0, &mut out).unwrap();
    assert!(!report.passed);

    // An empty persona file is malformed.
    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let mut out = Vec::new();
    assert!(matches!(
        cmd_audit(&summary.final_checkpoint, &empty, 0.1, &mut out),
        Err(CliError::MalformedPersonaFile(_))
    ));
}

#[test]
fn interview_protocol_shape_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_desk(3);
    let mut log = Vec::new();
    let summary = cmd_train(&cfg, dir.path(), &mut log).unwrap();

    let run = |answers: &str, log_name: &str| -> (Vec<String>, String) {
        let log_path = dir.path().join(log_name);
        let mut input = Cursor::new(answers.to_string());
        let mut out = Vec::new();
        cmd_interview(
            &summary.final_checkpoint,
            InterviewMode::Argmax,
            2,
            &log_path,
            &mut input,
            &mut out,
        )
        .unwrap();
        let log_lines = std::fs::read_to_string(&log_path)
            .unwrap()
            .lines()
            .map(str::to_string)
            .collect();
        (log_lines, String::from_utf8(out).unwrap())
    };

    let answers = "i am skilled in leadership\nyes definitely\nnot really\n";
    let (lines, out) = run(answers, "log1.jsonl");
    // 3 exchanges plus one score line.
    assert_eq!(lines.len(), 4);
    let first: serde_json::Value = serde_json::from_str(&lines[0]).unwrap();
    assert!(first["q"].is_null());
    let last: serde_json::Value = serde_json::from_str(&lines[3]).unwrap();
    assert!(last["score"].is_number());
    assert!(out.contains("final score:"));

    // Same checkpoint, same answers: identical question sequence.
    let (lines2, _) = run(answers, "log2.jsonl");
    let qs = |ls: &[String]| -> Vec<serde_json::Value> {
        ls.iter()
            .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["q"].clone())
            .collect()
    };
    assert_eq!(qs(&lines), qs(&lines2));

    // An empty answer re-prompts once, then the next line is accepted.
    let (lines3, out3) = run("\nrecovered answer\nsecond\nthird\n", "log3.jsonl");
    assert!(out3.contains("(please answer)"));
    let first: serde_json::Value = serde_json::from_str(&lines3[0]).unwrap();
    assert_eq!(first["text"], "recovered answer");
}

#[test]
fn binary_rejects_invalid_regime_with_exit_code_2() {
    let output = Command::new(env!("CARGO_BIN_EXE_elicit"))
        .args(["train", "--regime", "sometimes"])
        .output()
        .unwrap();
    assert!(!output.status.success());
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn regime_report_emits_one_file_per_figure() {
    let dir = tempfile::tempdir().unwrap();
    let mut base = fast_config();
    base.epochs = 5;
    base.bank_path = None;

    let mut every = base.clone();
    every.regime = Regime::Every;
    let mut never = base.clone();
    never.regime = Regime::Never;

    // A tiny bank keeps the toy run fast; write it to disk for the config.
    let bank_path = dir.path().join("bank.json");
    std::fs::write(&bank_path, tiny_bank().to_json()).unwrap();
    for cfg in [&mut every, &mut never] {
        cfg.bank_path = Some(bank_path.clone());
    }

    let paths = regime_report(&[every.clone(), never.clone()], dir.path()).unwrap();
    assert_eq!(paths.len(), 3);
    for p in &paths {
        let text = std::fs::read_to_string(p).unwrap();
        let data_rows = text
            .lines()
            .filter(|l| !l.starts_with('#') && !l.starts_with("epoch"))
            .count();
        assert_eq!(data_rows, 10, "2 regimes x 5 epochs in {}", p.display());
    }

    // Shared-seed determinism: rerunning NEVER reproduces its rows.
    let second = regime_report(&[never.clone()], dir.path()).unwrap();
    let text = std::fs::read_to_string(&second[0]).unwrap();
    assert!(text.lines().any(|l| l.contains("never")));

    // Configs differing beyond regime are rejected.
    let mut tampered = never;
    tampered.seed += 1;
    assert!(matches!(
        regime_report(&[every, tampered], dir.path()),
        Err(EvalError::ConfigMismatch(_))
    ));
}
