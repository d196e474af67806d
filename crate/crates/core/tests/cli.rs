use std::path::Path;
use std::process::{Command, Output};

use ntd::harness::ResultsDocument;
use ntd::streamgen::Stream;

const SMALL: &str = r#"
num_classes = 4
feature_dim = 6
num_tasks = 2
samples_per_task = 300
memory_size = 40
mem_epochs = 3
test_size = 200
seeds = [1, 2]
parallel = false
"#;

fn ntd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ntd")).args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("exp.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_writes_results_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let out = dir.path().join("results.json");
    let output = ntd(&[
        "run", "--config", &config, "--sampler", "ntd,reservoir", "--noise-type", "asym",
        "--noise-rate", "0.2", "--tta", "4", "--out", out.to_str().unwrap(),
    ]);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));

    let raw: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    for key in ["config", "trials", "aggregate", "comparison"] {
        assert!(raw.get(key).is_some(), "missing {key}");
    }
    assert_eq!(raw["config"]["noise_type"], "asym");
    assert_eq!(raw["config"]["tta_count"], 4);
    assert_eq!(raw["trials"].as_array().unwrap().len(), 4);
    let acc = &raw["aggregate"]["ntd"]["last_test_accuracy"];
    assert!(acc["mean"].is_f64() && acc["std"].is_f64());

    let doc = ResultsDocument::load(&out).unwrap();
    assert_eq!(doc.trials[0].seed, 1);

    let summary: serde_json::Value =
        serde_json::from_str(String::from_utf8(output.stdout).unwrap().trim()).unwrap();
    assert!(summary["aggregate"]["reservoir"].is_object());
    assert_eq!(summary["failed_trials"].as_array().unwrap().len(), 0);
}

#[test]
fn repeated_runs_match_modulo_timing() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let out = dir.path().join("r.json");
    let mut docs = Vec::new();
    for _ in 0..2 {
        assert!(ntd(&["run", "--config", &config, "--out", out.to_str().unwrap()]).status.success());
        let mut doc = ResultsDocument::load(&out).unwrap();
        doc.strip_timing();
        docs.push(doc.to_json());
    }
    assert_eq!(docs[0], docs[1]);
}

#[test]
fn invalid_config_exits_with_error_record() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "memory_size = 0\n");
    let output = ntd(&["run", "--config", &config]);
    assert!(!output.status.success());
    let record: serde_json::Value =
        serde_json::from_str(String::from_utf8(output.stderr).unwrap().trim()).unwrap();
    assert_eq!(record["error"]["kind"], "invalid_config");

    let output = ntd(&["run", "--config", dir.path().join("missing.toml").to_str().unwrap()]);
    assert!(!output.status.success());
    let record: serde_json::Value =
        serde_json::from_str(String::from_utf8(output.stderr).unwrap().trim()).unwrap();
    assert_eq!(record["error"]["kind"], "io");
}

#[test]
fn unwritable_output_fails() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let output = ntd(&["run", "--config", &config, "--seeds", "1", "--out", "/nonexistent/dir/r.json"]);
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("\"io\""));
}

#[test]
fn stream_export_reads_back() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), SMALL);
    let out = dir.path().join("stream.jsonl");
    let output = ntd(&["stream", "--config", &config, "--seed", "3", "--out", out.to_str().unwrap()]);
    assert!(output.status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    for key in ["id", "features", "noisy_label", "true_label", "task_index"] {
        assert!(first.get(key).is_some(), "missing {key}");
    }
    let stream = Stream::read_jsonl(text.as_bytes()).unwrap();
    assert_eq!(stream.len(), 600);
    assert_eq!(stream.samples_per_task, 300);
}

#[test]
fn default_config_round_trips_through_toml() {
    let output = ntd(&["config"]);
    assert!(output.status.success());
    let text = String::from_utf8(output.stdout).unwrap();
    let parsed = ntd::harness::ExperimentConfig::from_toml_str(&text).unwrap();
    assert_eq!(parsed, ntd::harness::ExperimentConfig::default());
}
