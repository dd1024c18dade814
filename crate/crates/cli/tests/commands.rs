use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use sfam_cli::synth::{write_planted_suite, SuiteConfig};
use sfam_cli::{cmd_evaluate, cmd_explain, cmd_sanity, Method, RunConfig, UsageError};
use sfam_core::store::{read_manifest, read_map, write_manifest};
use sfam_core::Metric;

fn suite(dir: &Path, episodes: usize) -> PathBuf {
    write_planted_suite(
        dir,
        &SuiteConfig {
            episodes,
            seed: 3,
            ..SuiteConfig::default()
        },
    )
    .unwrap()
}

fn is_usage(e: &anyhow::Error) -> bool {
    e.downcast_ref::<UsageError>().is_some()
}

#[test]
fn explain_writes_maps_and_overlays() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = suite(&dir.path().join("suite"), 3);
    let out = dir.path().join("out");
    let mut lines = Vec::new();
    let outcome = cmd_explain(&RunConfig::new(&manifest, &out), &mut lines).unwrap();
    assert_eq!(outcome.processed, 3);
    assert!(outcome.failures.is_empty());

    let text = String::from_utf8(lines).unwrap();
    let ids: Vec<&str> = text
        .lines()
        .map(|l| l.split('\t').next().unwrap())
        .collect();
    assert_eq!(ids, ["ep00000", "ep00001", "ep00002"]);
    assert!(text.lines().all(|l| l.contains("distance=")));

    let raw = read_map::<f32>(out.join("ep00000/map_raw.npy")).unwrap();
    assert_eq!((raw.height(), raw.width()), (10, 10));
    let norm = read_map::<f32>(out.join("ep00000/map_norm.npy")).unwrap();
    assert_eq!((norm.height(), norm.width()), (80, 80));
    assert_eq!((norm.min(), norm.max()), (0.0, 1.0));
    assert!(out.join("ep00002/overlay.png").is_file());
}

#[test]
fn explain_without_image_skips_overlay() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = suite(&dir.path().join("suite"), 1);
    let mut recs = read_manifest(&manifest).unwrap();
    recs[0].query_image_path = None;
    let bare = dir.path().join("bare.json");
    write_manifest(&bare, &recs).unwrap();
    let out = dir.path().join("out");
    cmd_explain(&RunConfig::new(&bare, &out), &mut Vec::new()).unwrap();
    assert!(out.join("ep00000/map_norm.npy").is_file());
    assert!(!out.join("ep00000/overlay.png").exists());
}

#[test]
fn decomposition_with_euclidean_is_rejected_before_work() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = RunConfig {
        method: Method::Decomposition,
        metric: Some(Metric::Euclidean),
        ..RunConfig::new(dir.path().join("missing.json"), &out)
    };
    let err = cmd_explain(&cfg, &mut Vec::new()).unwrap_err();
    assert!(is_usage(&err), "{err:#}");
    assert!(!out.exists());
}

#[test]
fn decomposition_reports_cosine() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = suite(&dir.path().join("suite"), 2);
    let cfg = RunConfig {
        method: Method::Decomposition,
        ..RunConfig::new(&manifest, dir.path().join("out"))
    };
    let mut lines = Vec::new();
    cmd_explain(&cfg, &mut lines).unwrap();
    let text = String::from_utf8(lines).unwrap();
    assert!(text
        .lines()
        .all(|l| l.contains("\tdecomposition\tcosine\tcosine=")));
}

#[test]
fn evaluate_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = suite(&dir.path().join("suite"), 4);
    let out = dir.path().join("out");
    let mut table = Vec::new();
    let res = cmd_evaluate(&RunConfig::new(&manifest, &out), &mut table).unwrap();
    assert_eq!(res.evaluation.per_episode.len(), 4);

    let csv = fs::read_to_string(out.join("evaluation.csv")).unwrap();
    let mut rows = csv.lines();
    assert_eq!(rows.next(), Some("episode_id,iou,hit"));
    assert_eq!(rows.count(), 4);

    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["n"], 4);
    assert_eq!(summary["method"], "sfam");
    assert_eq!(summary["metric"], "euclidean");
    assert!((summary["mean_iou"].as_f64().unwrap() - res.evaluation.mean_iou).abs() < 1e-12);

    let table = String::from_utf8(table).unwrap();
    assert!(table.contains("IoU (%)") && table.contains("Accuracy (%)"));
}

#[test]
fn evaluate_lists_episodes_without_truth() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = suite(&dir.path().join("suite"), 3);
    let mut recs = read_manifest(&manifest).unwrap();
    recs[1].truth_box = None;
    let partial = dir.path().join("partial.json");
    write_manifest(&partial, &recs).unwrap();
    let err = cmd_evaluate(
        &RunConfig::new(&partial, dir.path().join("out")),
        &mut Vec::new(),
    )
    .unwrap_err();
    assert!(is_usage(&err));
    assert!(err.to_string().contains("ep00001"));
}

#[test]
fn evaluate_rejects_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("empty.json");
    fs::write(&manifest, "[]").unwrap();
    let err = cmd_evaluate(
        &RunConfig::new(&manifest, dir.path().join("out")),
        &mut Vec::new(),
    )
    .unwrap_err();
    assert!(err.to_string().contains("no episodes"), "{err:#}");
}

fn corrupt_second_episode(dir: &Path) -> PathBuf {
    let manifest = suite(&dir.join("suite"), 3);
    let recs = read_manifest(&manifest).unwrap();
    fs::write(&recs[1].query_tensor_path, b"not an npy file").unwrap();
    manifest
}

#[test]
fn failure_stops_the_run_unless_keep_going() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = corrupt_second_episode(dir.path());

    let err = cmd_explain(
        &RunConfig::new(&manifest, dir.path().join("a")),
        &mut Vec::new(),
    )
    .unwrap_err();
    let msg = format!("{err:#}");
    assert!(msg.contains("ep00001") && msg.contains("magic"), "{msg}");

    let cfg = RunConfig {
        keep_going: true,
        ..RunConfig::new(&manifest, dir.path().join("b"))
    };
    let mut lines = Vec::new();
    let outcome = cmd_explain(&cfg, &mut lines).unwrap();
    assert_eq!(outcome.processed, 2);
    assert_eq!(outcome.failures.len(), 1);
    assert_eq!(outcome.failures[0].0, "ep00001");
    assert_eq!(String::from_utf8(lines).unwrap().lines().count(), 2);

    let res = cmd_evaluate(
        &RunConfig {
            keep_going: true,
            ..RunConfig::new(&manifest, dir.path().join("c"))
        },
        &mut Vec::new(),
    )
    .unwrap();
    assert_eq!(res.evaluation.per_episode.len(), 2);
}

#[test]
fn sanity_writes_report_and_strips() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = suite(&dir.path().join("suite"), 2);
    let out = dir.path().join("out");
    let fractions = [0.0, 0.5, 1.0];
    let res = cmd_sanity(
        &RunConfig::new(&manifest, &out),
        &fractions,
        &mut Vec::new(),
    )
    .unwrap();
    assert_eq!(res.stages.len(), 3);
    assert_eq!(res.stages[0].rank_correlation, 1.0);
    assert_eq!(res.stages[0].mean_iou_delta, Some(0.0));
    assert_eq!(res.stages[2].stage_label, "randomized 100%");

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("sanity_report.json")).unwrap()).unwrap();
    assert_eq!(report["episodes"], 2);
    assert_eq!(report["per_episode"].as_array().unwrap().len(), 2);
    let strip = image::open(out.join("ep00000/sanity_strip.png")).unwrap();
    assert_eq!((strip.width(), strip.height()), (80 * 4, 80));
}

#[test]
fn sanity_is_sfam_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        method: Method::Ram,
        ..RunConfig::new(dir.path().join("m.json"), dir.path().join("out"))
    };
    assert!(is_usage(
        &cmd_sanity(&cfg, &[0.0], &mut Vec::new()).unwrap_err()
    ));
}

fn sfam() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sfam"))
}

#[test]
fn binary_round_trip_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let suite_dir = dir.path().join("suite");
    let synth = sfam()
        .args(["synth", "--episodes", "2", "--out"])
        .arg(&suite_dir)
        .output()
        .unwrap();
    assert!(synth.status.success());
    let manifest = suite_dir.join("manifest.json");
    assert!(manifest.is_file());

    let eval = sfam()
        .args(["evaluate", "--jobs", "2", "--manifest"])
        .arg(&manifest)
        .arg("--out")
        .arg(dir.path().join("eval"))
        .output()
        .unwrap();
    assert!(
        eval.status.success(),
        "{}",
        String::from_utf8_lossy(&eval.stderr)
    );
    assert!(String::from_utf8(eval.stdout).unwrap().contains("IoU (%)"));

    let bad = sfam()
        .args([
            "explain",
            "--method",
            "decomposition",
            "--metric",
            "euclidean",
            "--manifest",
        ])
        .arg(&manifest)
        .arg("--out")
        .arg(dir.path().join("x"))
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));

    let missing = sfam()
        .args(["explain", "--manifest"])
        .arg(dir.path().join("nope.json"))
        .arg("--out")
        .arg(dir.path().join("y"))
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(1));
}
