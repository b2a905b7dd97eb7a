mod common;

use std::path::{Path, PathBuf};
use std::process::Command;

use common::*;
use revchain::cli::dispatch;
use revchain::pipelines::RunArtifact;

struct Outcome {
    code: i32,
    stdout: String,
    stderr: String,
}

fn cli(args: &[&str]) -> Outcome {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("revchain").chain(args.iter().copied());
    let code = dispatch(argv, &mut out, &mut err);
    Outcome { code, stdout: String::from_utf8(out).unwrap(), stderr: String::from_utf8(err).unwrap() }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn run_fixture(out: &Path, extra: &[&str]) -> Outcome {
    let config = fixtures().join("run.json");
    let mut args = vec!["run", "--config", s(&config), "--out", s(out)];
    args.extend_from_slice(extra);
    cli(&args)
}

const DETERMINISTIC: [&str; 3] = ["predictions.jsonl", "transcripts.jsonl", "failures.jsonl"];

#[test]
fn run_eval_report_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let script = fixtures().join("script.jsonl");

    let first = run_fixture(&a, &["--method", "trcr", "--seed", "7", "--scripted", s(&script)]);
    assert_eq!(first.code, 0, "{}", first.stderr);
    let second = run_fixture(&b, &["--method", "trcr", "--seed", "7", "--scripted", s(&script)]);
    assert_eq!(second.code, 0, "{}", second.stderr);
    for f in DETERMINISTIC {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }

    let art = RunArtifact::load(&a).unwrap();
    assert_eq!(art.manifest.seed, 7);
    assert_eq!(art.manifest.model_id, "scripted-fixture");
    assert!(art.manifest.overrides.iter().any(|o| o == "method=trcr"));
    assert!(art.manifest.overrides.iter().any(|o| o == "seed=7"));
    let expected = &expected_labels()["trcr"];
    for p in &art.predictions {
        assert_eq!(p.final_polarity, Some(expected[&p.instance_id]), "{}", p.instance_id);
    }

    let dataset = fixtures().join("dataset");
    let eval = cli(&["eval", "--run", s(&a), "--dataset", s(&dataset)]);
    assert_eq!(eval.code, 0, "{}", eval.stderr);
    assert!(eval.stdout.contains("ALL") && eval.stdout.contains("100.00"), "{}", eval.stdout);
    assert!(a.join("report.json").is_file());

    // The fixture mixes domains, so it cannot sit in a benchmark table.
    let mixed = cli(&["report", "--runs", s(&a)]);
    assert_eq!(mixed.code, 2);
    assert!(mixed.stderr.contains("domain"), "{}", mixed.stderr);

    let laptop = tmp.path().join("laptop");
    std::fs::create_dir(&laptop).unwrap();
    let lines: String = std::fs::read_to_string(dataset.join("instances.jsonl"))
        .unwrap()
        .lines()
        .filter(|l| l.contains("\"lap-"))
        .map(|l| format!("{l}\n"))
        .collect();
    assert_eq!(lines.lines().count(), 3);
    std::fs::write(laptop.join("instances.jsonl"), lines).unwrap();
    let c = tmp.path().join("c");
    let r = run_fixture(&c, &["--method", "trcr", "--dataset", s(&laptop), "--scripted", s(&script)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(cli(&["eval", "--run", s(&c), "--dataset", s(&laptop)]).code, 0);

    let report = cli(&["report", "--runs", s(&c), "--paper-ref"]);
    assert_eq!(report.code, 0, "{}", report.stderr);
    assert!(report.stdout.contains("TRCR"), "{}", report.stdout);
    // No published row exists for the scripted model; baselines still print.
    assert!(!report.stdout.contains('['), "{}", report.stdout);
    assert!(report.stdout.contains("published zero-shot scores"), "{}", report.stdout);
    assert!(report.stdout.contains("baseline bert-spc"), "{}", report.stdout);

    let json = cli(&["report", "--runs", s(&c), "--json"]);
    assert_eq!(json.code, 0, "{}", json.stderr);
    let rows: serde_json::Value = serde_json::from_str(&json.stdout).unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 1);
}

#[test]
fn credentials_never_reach_the_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    std::env::set_var("REVCHAIN_CLI_TEST_KEY", "sk-very-secret");
    let mut cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fixtures().join("run.json")).unwrap()).unwrap();
    cfg["backend"]["api_key_ref"] = "REVCHAIN_CLI_TEST_KEY".into();
    cfg["backend"]["scripted_path"] = s(&fixtures().join("script.jsonl")).into();
    cfg["dataset_path"] = s(&fixtures().join("dataset")).into();
    let path = tmp.path().join("run.json");
    std::fs::write(&path, cfg.to_string()).unwrap();

    let r = cli(&["run", "--config", s(&path), "--out", s(&out)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    for entry in std::fs::read_dir(&out).unwrap() {
        let text = std::fs::read_to_string(entry.unwrap().path()).unwrap();
        assert!(!text.contains("sk-very-secret"));
    }
    let manifest = std::fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("REVCHAIN_CLI_TEST_KEY"));
}

/// Writes a copy of the fixture script without the DRCR contrast answer for
/// rest-2#0 and a config pointing at it.
fn gapped_config(dir: &Path, max_failure_ratio: Option<f64>) -> PathBuf {
    let full = dir.join("full");
    assert_eq!(run_fixture(&full, &[]).code, 0);
    let transcripts = std::fs::read_to_string(full.join("transcripts.jsonl")).unwrap();
    let line: serde_json::Value = transcripts
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .find(|v| v["instance_id"] == "rest-2#0")
        .unwrap();
    let contrast = line["entries"].as_array().unwrap().iter().find(|e| e["step"] == 3).unwrap();
    let hash = contrast["prompt_hash"].as_str().unwrap().to_string();

    let script = std::fs::read_to_string(fixtures().join("script.jsonl")).unwrap();
    let kept: String = script.lines().filter(|l| !l.contains(&hash)).map(|l| format!("{l}\n")).collect();
    assert_eq!(kept.lines().count() + 1, script.lines().count());
    std::fs::write(dir.join("gapped.jsonl"), kept).unwrap();

    let mut cfg: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(fixtures().join("run.json")).unwrap()).unwrap();
    cfg["backend"]["scripted_path"] = "gapped.jsonl".into();
    cfg["dataset_path"] = s(&fixtures().join("dataset")).into();
    if let Some(r) = max_failure_ratio {
        cfg["max_failure_ratio"] = r.into();
    }
    let path = dir.join("run.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    path
}

#[test]
fn scripted_gap_respects_failure_threshold() {
    let tmp = tempfile::tempdir().unwrap();
    let config = gapped_config(tmp.path(), Some(0.2));
    let out = tmp.path().join("lenient");
    let r = cli(&["run", "--config", s(&config), "--out", s(&out)]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let art = RunArtifact::load(&out).unwrap();
    assert_eq!((art.predictions.len(), art.failures.len()), (5, 1));
    assert_eq!(art.failures[0].instance_id, "rest-2#0");
    assert_eq!(art.manifest.counts.failed, 1);

    let tmp = tempfile::tempdir().unwrap();
    let config = gapped_config(tmp.path(), None);
    let out = tmp.path().join("strict");
    let r = cli(&["run", "--config", s(&config), "--out", s(&out)]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("rest-2#0"), "{}", r.stderr);
    assert!(out.join("failures.jsonl").is_file());
}

#[test]
fn usage_and_execution_errors() {
    assert_eq!(cli(&["frobnicate"]).code, 1);
    assert_eq!(cli(&["run"]).code, 1);
    assert_eq!(cli(&["run", "--config", "x.json", "--parallelism", "0"]).code, 1);
    assert_eq!(cli(&["--help"]).code, 0);

    let missing = cli(&["run", "--config", "/nonexistent/run.json"]);
    assert_eq!(missing.code, 2);
    assert!(missing.stderr.starts_with("error: ["), "{}", missing.stderr);

    let tmp = tempfile::tempdir().unwrap();
    let r = cli(&["eval", "--run", s(tmp.path()), "--dataset", s(&fixtures().join("dataset"))]);
    assert_eq!(r.code, 2);
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_revchain");
    let status = Command::new(bin).arg("frobnicate").output().unwrap().status;
    assert_eq!(status.code(), Some(1));

    let out = Command::new(bin)
        .args(["reference", "--model", "gpt-3.5", "--method", "drcr"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!out.stdout.is_empty());
}
