use std::path::Path;
use std::process::{Command, Output};

use onset_core::bundle::{ModelBundle, ModelProvenance};
use onset_core::detector::detect_stream;
use onset_core::io::{dataset_hash, read_dataset};
use onset_core::training::TrainingContext;
use onset_core::{FeatureLayout, RunConfig};

fn onset(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_onset"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = onset(args, dir);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn small_data(dir: &Path) {
    ok(
        &["gen", "--preset", "STRONG_ONSET", "--seed", "4", "--set", "n_sets=3", "--set", "streams_per_set=3", "--out", "data"],
        dir,
    );
}

fn first_stream(dir: &Path) -> String {
    let mut names: Vec<String> = std::fs::read_dir(dir.join("data/streams"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".jsonl"))
        .collect();
    names.sort();
    format!("data/streams/{}", names[0])
}

#[test]
fn full_round_trip_writes_every_output() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_data(dir);
    assert!(dir.join("data/dataset.json").is_file());
    assert!(dir.join("data/labels.json").is_file());
    assert!(dir.join("data/scenario.json").is_file());
    ok(&["train", "--data", "data", "--out-model", "model.json"], dir);
    let stream = first_stream(dir);
    ok(&["detect", "--model", "model.json", "--stream", &stream, "--out", "det/d.json"], dir);
    assert!(dir.join("det/d.json").is_file());
    let traces = std::fs::read_to_string(dir.join("det/d.traces.csv")).unwrap();
    assert!(traces.starts_with("t,handshake,"));
    ok(&["eval", "--model", "model.json", "--data", "data", "--ratios", "0.2,0.5,1.0", "--out-dir", "ev"], dir);
    let table = std::fs::read_to_string(dir.join("ev/mean_ap.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    assert!(dir.join("ev/pr_curves.csv").is_file());
    ok(
        &["eval", "--cv", "--data", "data", "--methods", "HISTOGRAM_PLUS_MEAN_MAX,NO_ONSET", "--ratios", "0.5,1", "--out-dir", "cv"],
        dir,
    );
    for f in ["method_comparison.csv", "summary.csv", "no_onset_ap.csv", "no_onset_pr.csv"] {
        assert!(dir.join("cv").join(f).is_file(), "{f}");
    }
    ok(&["ablate", "--data", "data", "--variants", "HISTOGRAM_ONLY,RAW_PRIOR_FRAMES", "--ratios", "0.5", "--out-dir", "ab"], dir);
    let ab = std::fs::read_to_string(dir.join("ab/ablation.csv")).unwrap();
    assert!(ab.starts_with("ratio,HISTOGRAM_ONLY,RAW_PRIOR_FRAMES\n"));
    let bench = ok(&["bench", "--model", "model.json", "--stream", &stream, "--repeat", "1", "--out", "bench.json"], dir);
    assert!(bench.contains("double_levels") && bench.contains("double_hypotheses"));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("bench.json")).unwrap()).unwrap();
    assert!(report["seconds_per_frame"]["p50"].as_f64().unwrap() > 0.0);
}

#[test]
fn saved_model_scores_match_in_memory_model() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    small_data(dir);
    let (ds, _) = read_dataset(&dir.join("data")).unwrap();
    let all: Vec<usize> = (0..ds.streams.len()).collect();
    let cfg = RunConfig::default();
    let ctx = TrainingContext::prepare(&ds, &all, &cfg).unwrap();
    let model = ctx.train_model(FeatureLayout::early(cfg.representation)).unwrap();
    let bundle = ModelBundle::new(
        cfg,
        ModelProvenance {
            seed: 0,
            dataset_hash: dataset_hash(&ds),
            n_train_streams: all.len(),
        },
        model,
    );
    let path = dir.join("m.json");
    bundle.save(&path).unwrap();
    let loaded = ModelBundle::load(&path).unwrap();
    for s in &ds.streams {
        let a = detect_stream(&bundle.model, s).unwrap();
        let b = detect_stream(&loaded.model, s).unwrap();
        for (ta, tb) in a.traces.iter().zip(&b.traces) {
            for (x, y) in ta.iter().zip(tb) {
                assert_eq!(x.score.to_bits(), y.score.to_bits());
            }
        }
        assert_eq!(a.detections, b.detections);
    }

    // The CLI trains the same model from the same defaults.
    ok(&["train", "--data", "data", "--out-model", "cli.json"], dir);
    let cli = ModelBundle::load(&dir.join("cli.json")).unwrap();
    assert_eq!(cli.model, bundle.model);
}

fn assert_one_line_failure(args: &[&str], dir: &Path, needle: &str) {
    let out = onset(args, dir);
    assert!(!out.status.success(), "{args:?} should fail");
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: "), "{err}");
    assert!(err.contains(needle), "{err}");
}

#[test]
fn bad_input_fails_with_one_line() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_one_line_failure(&["gen", "--preset", "NOPE", "--out", "x"], dir, "error: gen:");
    assert_one_line_failure(&["gen", "--set", "bogus=1", "--out", "x"], dir, "bogus");
    assert_one_line_failure(&["train", "--data", "missing", "--out-model", "m.json"], dir, "error: train:");
    assert_one_line_failure(&["eval", "--data", "missing", "--out-dir", "e"], dir, "error: usage:");
    assert_one_line_failure(&["frobnicate"], dir, "error: usage:");

    small_data(dir);
    ok(&["train", "--data", "data", "--set", "sgd.epochs=2", "--out-model", "model.json"], dir);
    assert_one_line_failure(&["train", "--data", "data", "--set", "vocabulary=0", "--out-model", "m.json"], dir, "vocabulary");
    assert_one_line_failure(
        &["eval", "--model", "model.json", "--data", "data", "--ratios", "0,0.5", "--out-dir", "e"],
        dir,
        "ratios",
    );
    let mut raw: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("model.json")).unwrap()).unwrap();
    raw["format_version"] = 99.into();
    std::fs::write(dir.join("old.json"), serde_json::to_vec(&raw).unwrap()).unwrap();
    let stream = first_stream(dir);
    assert_one_line_failure(&["detect", "--model", "old.json", "--stream", &stream, "--out", "d.json"], dir, "version 99");
    std::fs::write(dir.join("bad.csv"), "1,2\n3,4\n").unwrap();
    assert_one_line_failure(&["detect", "--model", "model.json", "--stream", "bad.csv", "--out", "d.json"], dir, "error: detect:");
}
