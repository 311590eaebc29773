use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;

use onset_bench::{frame_times, scaling_table, Percentiles, ScalingRow};
use onset_core::bundle::{ModelBundle, ModelProvenance};
use onset_core::detector::detect_stream;
use onset_core::evaluation::{cross_validate, mean_ap_vs_ratio, run_ablation, CvReport};
use onset_core::io::{dataset_hash, read_dataset, read_stream, write_dataset, write_detections, write_json, write_text, Provenance};
use onset_core::synthgen::{preset, sample_scenario, ScenarioConfig};
use onset_core::training::TrainingContext;
use onset_core::{Dataset, FeatureLayout, Method, OnsetRepresentation, RunConfig, StreamState};

use crate::settings::{load, run_config};
use crate::ConfigArgs;

const SCENARIO_FILE: &str = "scenario.json";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("{}", dir.display()))
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    Ok(read_dataset(path)?.0)
}

fn file_stem(name: &str) -> String {
    name.to_ascii_lowercase()
}

pub fn gen(config: Option<&Path>, preset_name: &str, seed: u64, overrides: &[String], out: &Path) -> Result<()> {
    let base = preset(preset_name)?;
    let cfg: ScenarioConfig = load(config, &base, overrides)?;
    let generated = sample_scenario(&cfg, seed)?;
    create_dir(out)?;
    let provenance = Provenance {
        generator: Some(format!("onset gen {}", cfg.name)),
        seed: Some(seed),
        config_hash: Some(generated.config_hash.clone()),
    };
    let manifest = write_dataset(out, &generated.dataset, &provenance)?;
    write_json(&out.join(SCENARIO_FILE), &cfg)?;
    let ds = &generated.dataset;
    println!(
        "wrote {} streams in {} sets to {}",
        ds.streams.len(),
        ds.sets.len(),
        manifest.display()
    );
    Ok(())
}

pub fn train(data: &Path, args: &ConfigArgs, seed: Option<u64>, out_model: &Path) -> Result<()> {
    let mut cfg = run_config(args)?;
    if let Some(s) = seed {
        cfg.codebook_seed = s;
        cfg.sampling_seed = s;
    }
    let ds = load_dataset(data)?;
    let all: Vec<usize> = (0..ds.streams.len()).collect();
    let ctx = TrainingContext::prepare(&ds, &all, &cfg)?;
    let model = ctx.train_model(FeatureLayout::early(cfg.representation))?;
    let provenance = ModelProvenance {
        seed: cfg.sampling_seed,
        dataset_hash: dataset_hash(&ds),
        n_train_streams: all.len(),
    };
    if let Some(dir) = out_model.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    ModelBundle::new(cfg, provenance, model).save(out_model)?;
    println!("wrote model to {}", out_model.display());
    Ok(())
}

fn default_traces_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("detections");
    out.with_file_name(format!("{stem}.traces.csv"))
}

pub fn detect(model: &Path, stream: &Path, out: &Path, traces: Option<&Path>) -> Result<()> {
    let bundle = ModelBundle::load(model)?;
    let stream = read_stream(stream)?;
    let result = detect_stream(&bundle.model, &stream)?;
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_detections(out, &result.detections)?;
    let traces_path = traces.map(Path::to_path_buf).unwrap_or_else(|| default_traces_path(out));
    write_text(&traces_path, &result.traces_csv(&bundle.model.classes.main))?;
    println!(
        "{} detections over {} frames; traces in {}",
        result.detections.len(),
        stream.len(),
        traces_path.display()
    );
    Ok(())
}

fn check_ratios(ratios: &[f64]) -> Result<()> {
    if ratios.is_empty() || ratios.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
        bail!("ratios must be a nonempty list of values in (0, 1]");
    }
    Ok(())
}

pub fn eval_model(model: &Path, data: &Path, ratios: Option<Vec<f64>>, out_dir: &Path) -> Result<()> {
    let bundle = ModelBundle::load(model)?;
    let ratios = ratios.unwrap_or_else(|| bundle.config.ratios.clone());
    check_ratios(&ratios)?;
    let ds = load_dataset(data)?;
    if ds.classes != bundle.model.classes {
        bail!("dataset classes differ from the model's");
    }
    let all: Vec<usize> = (0..ds.streams.len()).collect();
    let eval = mean_ap_vs_ratio(&bundle.model, &ds, &all, &ratios)?;
    create_dir(out_dir)?;
    write_text(&out_dir.join("mean_ap.csv"), &eval.table.to_csv())?;
    write_text(&out_dir.join("pr_curves.csv"), &eval.curves_csv())?;
    for (r, m) in eval.table.ratios.iter().zip(&eval.table.mean) {
        println!("ratio {r}: mean AP {m:.4}");
    }
    Ok(())
}

fn write_report(report: &CvReport, out_dir: &Path, table_name: &str) -> Result<()> {
    create_dir(out_dir)?;
    write_text(&out_dir.join(table_name), &report.mean_ap_csv())?;
    let mut summary = String::from("method,low_ratio_mean_ap,first_ratio_reaching_0.5\n");
    for (name, eval) in &report.methods {
        let stem = file_stem(name);
        write_text(&out_dir.join(format!("{stem}_ap.csv")), &eval.table.to_csv())?;
        write_text(&out_dir.join(format!("{stem}_pr.csv")), &eval.curves_csv())?;
        let first = eval.table.first_ratio_reaching(0.5).map(|r| r.to_string()).unwrap_or_default();
        summary.push_str(&format!("{name},{},{first}\n", eval.table.low_ratio_mean(0.5)));
    }
    write_text(&out_dir.join("summary.csv"), &summary)?;
    print!("{}", report.mean_ap_csv());
    Ok(())
}

fn with_ratios(mut cfg: RunConfig, ratios: Option<Vec<f64>>) -> Result<RunConfig> {
    if let Some(r) = ratios {
        check_ratios(&r)?;
        cfg.ratios = r;
    }
    Ok(cfg)
}

pub fn eval_cv(data: &Path, args: &ConfigArgs, ratios: Option<Vec<f64>>, methods: Option<Vec<String>>, out_dir: &Path) -> Result<()> {
    let cfg = with_ratios(run_config(args)?, ratios)?;
    let methods = match methods {
        Some(names) => names
            .iter()
            .map(|n| Method::parse(n.trim()).ok_or_else(|| anyhow!("unknown method `{n}`")))
            .collect::<Result<Vec<_>>>()?,
        None => Method::comparison(),
    };
    let ds = load_dataset(data)?;
    let report = cross_validate(&ds, &cfg, &methods)?;
    write_report(&report, out_dir, "method_comparison.csv")
}

pub fn ablate(data: &Path, args: &ConfigArgs, variants: Option<Vec<String>>, ratios: Option<Vec<f64>>, out_dir: &Path) -> Result<()> {
    let cfg = with_ratios(run_config(args)?, ratios)?;
    let variants = match variants {
        Some(names) => names
            .iter()
            .map(|n| OnsetRepresentation::parse(n.trim()).ok_or_else(|| anyhow!("unknown representation `{n}`")))
            .collect::<Result<Vec<_>>>()?,
        None => OnsetRepresentation::ALL.to_vec(),
    };
    let ds = load_dataset(data)?;
    let report = run_ablation(&ds, &cfg, &variants)?;
    write_report(&report, out_dir, "ablation.csv")
}

#[derive(Serialize)]
struct BenchReport {
    frames: usize,
    repeat: usize,
    classes: usize,
    onset_detectors: usize,
    progress_levels: usize,
    duration_hypotheses: usize,
    vocabulary: usize,
    seconds_per_frame: Timing,
    scaling: Vec<Scaling>,
}

#[derive(Serialize)]
struct Timing {
    p50: f64,
    p90: f64,
    p99: f64,
    mean: f64,
}

#[derive(Serialize)]
struct Scaling {
    variant: String,
    progress_levels: usize,
    duration_hypotheses: usize,
    median_seconds: f64,
    factor: f64,
}

pub fn bench(model: &Path, stream: &Path, repeat: usize, out: Option<&Path>) -> Result<()> {
    if repeat == 0 {
        bail!("repeat must be positive");
    }
    let bundle = ModelBundle::load(model)?;
    let m = &bundle.model;
    let stream = read_stream(stream)?;
    if stream.is_empty() {
        bail!("stream {} has no frames", stream.id);
    }
    let state = StreamState::for_model(m, &stream)?;
    let p = Percentiles::of(&frame_times(m, &state, repeat));
    let rows: Vec<ScalingRow> = scaling_table(m, &state, repeat);
    let report = BenchReport {
        frames: stream.len(),
        repeat,
        classes: m.classes.main.len(),
        onset_detectors: m.templates.len(),
        progress_levels: m.bank.progress_levels.len(),
        duration_hypotheses: m.durations.first().map_or(0, Vec::len),
        vocabulary: m.vocabulary(),
        seconds_per_frame: Timing {
            p50: p.p50,
            p90: p.p90,
            p99: p.p99,
            mean: p.mean,
        },
        scaling: rows
            .iter()
            .map(|r| Scaling {
                variant: r.variant.clone(),
                progress_levels: r.levels,
                duration_hypotheses: r.hypotheses,
                median_seconds: r.median,
                factor: r.factor,
            })
            .collect(),
    };
    println!(
        "{} frames x {} passes; K={} classes={} |d|={} R={} W={}",
        report.frames,
        repeat,
        report.onset_detectors,
        report.classes,
        report.progress_levels,
        report.duration_hypotheses,
        report.vocabulary
    );
    println!(
        "per-frame ms: p50 {:.4} p90 {:.4} p99 {:.4} mean {:.4}",
        p.p50 * 1e3,
        p.p90 * 1e3,
        p.p99 * 1e3,
        p.mean * 1e3
    );
    println!("variant,progress_levels,duration_hypotheses,median_ms,factor");
    for r in &rows {
        println!("{},{},{},{:.4},{:.3}", r.variant, r.levels, r.hypotheses, r.median * 1e3, r.factor);
    }
    if let Some(path) = out {
        write_json(path, &report)?;
    }
    Ok(())
}
