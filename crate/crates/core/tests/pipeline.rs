use onset_core::bundle::{BundleError, ModelBundle, ModelProvenance, MODEL_FORMAT_VERSION};
use onset_core::detector::{context_only_score, detect_stream, OnlineDetector};
use onset_core::evaluation::onset_detector_ap;
use onset_core::io::{dataset_hash, read_dataset, write_dataset, Provenance};
use onset_core::synthgen::{preset, sample_scenario, ScenarioConfig};
use onset_core::timeline::validate_dataset;
use onset_core::training::TrainingContext;
use onset_core::{ActivityKind, Dataset, DetectorModel, FeatureLayout, OnsetRepresentation, RunConfig, StreamState};

fn small(name: &str, sets: usize, per_set: usize) -> ScenarioConfig {
    ScenarioConfig {
        n_sets: sets,
        streams_per_set: per_set,
        ..preset(name).unwrap()
    }
}

fn trained(ds: &Dataset, layout: FeatureLayout) -> DetectorModel {
    let all: Vec<usize> = (0..ds.streams.len()).collect();
    let ctx = TrainingContext::prepare(ds, &all, &RunConfig::default()).unwrap();
    ctx.train_model(layout).unwrap()
}

#[test]
fn scenario_is_reproducible_and_well_formed() {
    let cfg = small("STRONG_ONSET", 2, 2);
    let a = sample_scenario(&cfg, 11).unwrap();
    let b = sample_scenario(&cfg, 11).unwrap();
    let c = sample_scenario(&cfg, 12).unwrap();
    assert_eq!(a, b);
    assert_ne!(dataset_hash(&a.dataset), dataset_hash(&c.dataset));
    assert!(validate_dataset(&a.dataset).is_empty());
}

#[test]
fn dataset_round_trips_through_files() {
    let g = sample_scenario(&small("WEAK_ONSET", 2, 2), 3).unwrap();
    let prov = Provenance {
        generator: Some("test".into()),
        seed: Some(g.seed),
        config_hash: Some(g.config_hash.clone()),
    };
    let dir = tempfile::tempdir().unwrap();
    let path = write_dataset(dir.path(), &g.dataset, &prov).unwrap();
    let (back, back_prov) = read_dataset(&path).unwrap();
    assert_eq!(back, g.dataset);
    assert_eq!(back_prov, prov);
    assert_eq!(dataset_hash(&back), dataset_hash(&g.dataset));

    let again = tempfile::tempdir().unwrap();
    write_dataset(again.path(), &back, &prov).unwrap();
    for name in ["dataset.json", "labels.json"] {
        let x = std::fs::read(dir.path().join(name)).unwrap();
        let y = std::fs::read(again.path().join(name)).unwrap();
        assert_eq!(x, y, "{name}");
    }
}

#[test]
fn bundle_round_trip_and_version_check() {
    let g = sample_scenario(&small("STRONG_ONSET", 2, 2), 5).unwrap();
    let model = trained(&g.dataset, FeatureLayout::early(OnsetRepresentation::HistogramPlusMeanMax));
    let bundle = ModelBundle::new(
        RunConfig::default(),
        ModelProvenance {
            seed: 5,
            dataset_hash: dataset_hash(&g.dataset),
            n_train_streams: g.dataset.streams.len(),
        },
        model,
    );
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    bundle.save(&path).unwrap();
    assert_eq!(ModelBundle::load(&path).unwrap(), bundle);

    let mut raw: serde_json::Value = serde_json::from_slice(&std::fs::read(&path).unwrap()).unwrap();
    raw["format_version"] = (MODEL_FORMAT_VERSION + 1).into();
    std::fs::write(&path, serde_json::to_vec(&raw).unwrap()).unwrap();
    match ModelBundle::load(&path) {
        Err(BundleError::Version { found }) => assert_eq!(found, MODEL_FORMAT_VERSION + 1),
        other => panic!("expected a version error, got {other:?}"),
    }
}

#[test]
fn online_matches_batch_on_a_trained_model() {
    let g = sample_scenario(&small("STRONG_ONSET", 2, 3), 9).unwrap();
    let model = trained(&g.dataset, FeatureLayout::early(OnsetRepresentation::HistogramPlusMeanMax));
    let stream = &g.dataset.streams[0];
    let batch = detect_stream(&model, stream).unwrap();
    let mut online = OnlineDetector::new(&model).unwrap();
    for f in stream.frames() {
        for s in online.push(f).unwrap() {
            assert!(s.score >= 0.0 && s.score.is_finite());
        }
    }
    let online = online.finish(&stream.id);
    assert_eq!(online, batch);
    assert!(!batch.detections.is_empty());
}

#[test]
fn weak_onset_detectors_are_weak() {
    let g = sample_scenario(&preset("WEAK_ONSET").unwrap(), 0).unwrap();
    let report = onset_detector_ap(&g.dataset, &RunConfig::default()).unwrap();
    assert!(
        (0.05..=0.4).contains(&report.mean),
        "onset detector mean AP {}",
        report.mean
    );
}

#[test]
fn context_alone_points_at_the_correlated_class() {
    let g = sample_scenario(&small("STRONG_ONSET", 3, 3), 2).unwrap();
    let ds = &g.dataset;
    let model = trained(ds, FeatureLayout::context_only());
    let n_classes = ds.classes.main.len();
    let cfg = preset("STRONG_ONSET").unwrap();
    let (mut hits, mut total) = (0usize, 0usize);
    for stream in &ds.streams {
        let state = StreamState::for_model(&model, stream).unwrap();
        for inst in ds.labels_for(&stream.id) {
            if inst.kind != ActivityKind::Main {
                continue;
            }
            let c = ds.classes.main_index(&inst.class).unwrap();
            if cfg.correlated_onset[c].is_none() {
                continue;
            }
            let t = inst.interval.t1 + inst.interval.len() / 10;
            let scores: Vec<f64> = (0..n_classes)
                .map(|k| context_only_score(&model, &state, t, k).unwrap())
                .collect();
            let best = (0..n_classes).max_by(|&a, &b| scores[a].total_cmp(&scores[b])).unwrap();
            hits += usize::from(best == c);
            total += 1;
        }
    }
    assert!(total > 20);
    assert!(hits as f64 / total as f64 >= 0.5, "{hits}/{total}");
}
