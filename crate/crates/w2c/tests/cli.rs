//! End-to-end tests of the `w2c` binary: run, validate, stats, flag
//! plumbing, and resume behavior over a replay corpus.

mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::{build_corpus, golden_corpus, Corpus};
use w2c::datamodel::PipelineConfig;

fn w2c(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_w2c"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).to_string()
}

fn corpus_in(dir: &Path) -> Corpus {
    build_corpus(dir, golden_corpus(), &PipelineConfig::default())
}

fn path_str(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn run_then_validate_then_stats() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = corpus_in(dir.path());
    let out = dir.path().join("run");

    let run = w2c(&[
        "run",
        "--manifest",
        path_str(&corpus.manifest),
        "--replay",
        path_str(&corpus.replay),
        "--out",
        path_str(&out),
    ]);
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let run_stdout = stdout(&run);
    assert!(run_stdout.contains("6 in"), "stdout: {run_stdout}");
    assert!(out.join("w2c.jsonl").exists());
    assert!(out.join("stats.json").exists());

    let validate = w2c(&["validate", path_str(&out.join("w2c.jsonl"))]);
    assert!(validate.status.success());
    assert!(stdout(&validate).contains("ok"));

    let stats = w2c(&["stats", path_str(&out)]);
    assert!(stats.status.success());
    let stats_stdout = stdout(&stats);
    assert!(stats_stdout.contains("images:"), "stdout: {stats_stdout}");
    assert!(stats_stdout.contains("backends:"));
}

#[test]
fn validate_reports_tampered_lines() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = corpus_in(dir.path());
    let out = dir.path().join("run");
    let run = w2c(&[
        "run",
        "--manifest",
        path_str(&corpus.manifest),
        "--replay",
        path_str(&corpus.replay),
        "--out",
        path_str(&out),
    ]);
    assert!(run.status.success());

    // Flip one box coordinate inside the JSON groups, leaving the code
    // field untouched: the code/structure cross-check must fire.
    let output_file = out.join("w2c.jsonl");
    let text = std::fs::read_to_string(&output_file).unwrap();
    let tampered = text.replacen("[10, 40, 200, 260]", "[10, 40, 200, 261]", 1);
    assert_ne!(text, tampered, "tamper target not found");
    let tampered_file = dir.path().join("tampered.jsonl");
    std::fs::write(&tampered_file, tampered).unwrap();

    let validate = w2c(&["validate", path_str(&tampered_file)]);
    assert!(!validate.status.success());
    assert!(stdout(&validate).contains("code/structure mismatch"));
}

#[test]
fn filter_flags_reach_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = corpus_in(dir.path());

    // Both filters off: the counting-rejected image survives.
    let out_off = dir.path().join("off");
    let run = w2c(&[
        "run",
        "--manifest",
        path_str(&corpus.manifest),
        "--replay",
        path_str(&corpus.replay),
        "--out",
        path_str(&out_off),
        "--no-counting-filter",
        "--no-reranking",
    ]);
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let produced = std::fs::read_to_string(out_off.join("w2c.jsonl")).unwrap();
    assert_eq!(produced.lines().count(), 5);
    assert!(produced.contains("golden-03"));

    // Group-level dropping keeps golden-03 with its surviving group.
    let out_group = dir.path().join("group");
    let run = w2c(&[
        "run",
        "--manifest",
        path_str(&corpus.manifest),
        "--replay",
        path_str(&corpus.replay),
        "--out",
        path_str(&out_group),
        "--drop-policy",
        "group",
    ]);
    assert!(run.status.success());
    let produced = std::fs::read_to_string(out_group.join("w2c.jsonl")).unwrap();
    let g3 = produced
        .lines()
        .map(|l| w2c::JsonlRecord::from_line(l).unwrap())
        .find(|r| r.id == "golden-03")
        .expect("golden-03 survives under group dropping");
    let names: Vec<&str> = g3.groups.iter().map(|g| g.name.as_str()).collect();
    assert_eq!(names, vec!["field"]);
}

#[test]
fn format_flag_switches_output_layout() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = corpus_in(dir.path());
    let out = dir.path().join("single");
    let run = w2c(&[
        "run",
        "--manifest",
        path_str(&corpus.manifest),
        "--replay",
        path_str(&corpus.replay),
        "--out",
        path_str(&out),
        "--format",
        "single",
    ]);
    assert!(run.status.success());
    let produced = std::fs::read_to_string(out.join("w2c.jsonl")).unwrap();
    for line in produced.lines() {
        let value: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(value["conversations"].is_array());
    }

    let bad = w2c(&[
        "run",
        "--manifest",
        path_str(&corpus.manifest),
        "--replay",
        path_str(&corpus.replay),
        "--out",
        path_str(&dir.path().join("bad")),
        "--format",
        "yaml",
    ]);
    assert!(!bad.status.success());
}

#[test]
fn concurrency_levels_agree_byte_for_byte() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = corpus_in(dir.path());
    let out_1 = dir.path().join("c1");
    let out_8 = dir.path().join("c8");
    for (out, level) in [(&out_1, "1"), (&out_8, "8")] {
        let run = w2c(&[
            "run",
            "--manifest",
            path_str(&corpus.manifest),
            "--replay",
            path_str(&corpus.replay),
            "--out",
            path_str(out),
            "--concurrency",
            level,
        ]);
        assert!(run.status.success());
    }
    assert_eq!(
        std::fs::read(out_1.join("w2c.jsonl")).unwrap(),
        std::fs::read(out_8.join("w2c.jsonl")).unwrap()
    );
}

#[test]
fn resume_flow_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = corpus_in(dir.path());
    let out = dir.path().join("run");
    let first = w2c(&[
        "run",
        "--manifest",
        path_str(&corpus.manifest),
        "--replay",
        path_str(&corpus.replay),
        "--out",
        path_str(&out),
    ]);
    assert!(first.status.success());
    let first_bytes = std::fs::read(out.join("w2c.jsonl")).unwrap();

    // A second run without --resume refuses to clobber the directory.
    let second = w2c(&[
        "run",
        "--manifest",
        path_str(&corpus.manifest),
        "--replay",
        path_str(&corpus.replay),
        "--out",
        path_str(&out),
    ]);
    assert!(!second.status.success());
    assert!(String::from_utf8_lossy(&second.stderr).contains("--resume"));

    let resumed = w2c(&[
        "run",
        "--manifest",
        path_str(&corpus.manifest),
        "--replay",
        path_str(&corpus.replay),
        "--out",
        path_str(&out),
        "--resume",
    ]);
    assert!(resumed.status.success());
    assert_eq!(std::fs::read(out.join("w2c.jsonl")).unwrap(), first_bytes);
}

#[test]
fn config_file_is_loaded_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = corpus_in(dir.path());
    let config_path = dir.path().join("run_config.json");
    std::fs::write(
        &config_path,
        serde_json::json!({
            "pipeline": { "output_format": "multi" }
        })
        .to_string(),
    )
    .unwrap();

    let out = dir.path().join("from_config");
    let run = w2c(&[
        "run",
        "--manifest",
        path_str(&corpus.manifest),
        "--config",
        path_str(&config_path),
        "--replay",
        path_str(&corpus.replay),
        "--out",
        path_str(&out),
    ]);
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let produced = std::fs::read_to_string(out.join("w2c.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(produced.lines().next().unwrap()).unwrap();
    assert!(first["conversations"].is_array());

    // The --format flag takes precedence over the file.
    let out_override = dir.path().join("override");
    let run = w2c(&[
        "run",
        "--manifest",
        path_str(&corpus.manifest),
        "--config",
        path_str(&config_path),
        "--replay",
        path_str(&corpus.replay),
        "--out",
        path_str(&out_override),
        "--format",
        "code",
    ]);
    assert!(run.status.success());
    let produced = std::fs::read_to_string(out_override.join("w2c.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(produced.lines().next().unwrap()).unwrap();
    assert!(first["code"].is_string());
}

#[test]
fn live_mode_requires_endpoints_and_record_needs_a_destination() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = corpus_in(dir.path());

    let live = w2c(&[
        "run",
        "--manifest",
        path_str(&corpus.manifest),
        "--out",
        path_str(&dir.path().join("live")),
    ]);
    assert!(!live.status.success());
    assert!(String::from_utf8_lossy(&live.stderr).contains("vlm_endpoint"));

    let config_path = dir.path().join("endpoints.json");
    std::fs::write(
        &config_path,
        serde_json::json!({
            "vlm_endpoint": "http://127.0.0.1:9/",
            "grounding_endpoint": "http://127.0.0.1:9/"
        })
        .to_string(),
    )
    .unwrap();
    let record = w2c(&[
        "run",
        "--manifest",
        path_str(&corpus.manifest),
        "--config",
        path_str(&config_path),
        "--out",
        path_str(&dir.path().join("record")),
        "--record",
    ]);
    assert!(!record.status.success());
    assert!(String::from_utf8_lossy(&record.stderr).contains("--replay"));
}
