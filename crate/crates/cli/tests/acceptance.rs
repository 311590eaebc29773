//! Acceptance gate. Runs every criterion in sequence, prints one PASS/FAIL
//! line each and exits nonzero if any fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use onset_bench::{frame_times, reference_setup, scaling_table, Percentiles};
use onset_core::checks::{self, EXACTNESS, ORACLES};
use onset_core::evaluation::{cross_validate, first_ratio_reaching, CvReport};
use onset_core::synthgen::{preset, sample_scenario};
use onset_core::{Method, OnsetRepresentation as Rep, RunConfig, StreamState};

const SEEDS: u64 = 20;
const LOW_RATIO: f64 = 0.5;

struct Outcome {
    pass: bool,
    detail: String,
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn fmt_ratio(r: Option<f64>) -> String {
    r.map_or("never".into(), |r| format!("{r}"))
}

fn run_checks(suite: &[(&str, checks::Check)], cases: usize, base: u64) -> (bool, Vec<String>) {
    let mut pass = true;
    let mut notes = Vec::new();
    for (i, (name, check)) in suite.iter().enumerate() {
        match checks::run(*check, cases, base + i as u64) {
            Ok(n) => notes.push(format!("{name} {n}/{cases}")),
            Err(e) => {
                pass = false;
                notes.push(format!("{name} FAILED at {e}"));
            }
        }
    }
    (pass, notes)
}

fn exactness() -> Outcome {
    let start = Instant::now();
    let (ok, notes) = run_checks(&EXACTNESS, 1000, 0xE0);
    let secs = start.elapsed().as_secs_f64();
    Outcome {
        pass: ok && secs < 120.0,
        detail: format!("{}; {secs:.1}s (limit 120s)", notes.join(", ")),
    }
}

fn oracles() -> Outcome {
    let (ok, notes) = run_checks(&ORACLES, 400, 0x0A);
    Outcome {
        pass: ok,
        detail: format!("{}; relative tolerance 1e-9", notes.join(", ")),
    }
}

/// One cross-validation report per seed.
fn sweep(preset_name: &str, methods: &[Method]) -> Vec<CvReport> {
    let scenario = preset(preset_name).unwrap();
    let cfg = RunConfig::default();
    (0..SEEDS)
        .map(|seed| {
            let ds = sample_scenario(&scenario, seed).unwrap().dataset;
            cross_validate(&ds, &cfg, methods).unwrap()
        })
        .collect()
}

fn mean_curves(reports: &[CvReport], name: &str) -> Vec<Vec<f64>> {
    reports.iter().map(|r| r.get(name).unwrap().table.mean.clone()).collect()
}

fn median_curve(curves: &[Vec<f64>]) -> Vec<f64> {
    (0..curves[0].len())
        .map(|i| median(&curves.iter().map(|c| c[i]).collect::<Vec<_>>()))
        .collect()
}

fn core_claim(reports: &[CvReport], ratios: &[f64]) -> Outcome {
    let full = mean_curves(reports, Rep::HistogramPlusMeanMax.name());
    let none = mean_curves(reports, Rep::NoOnset.name());
    let mut ok = true;
    let mut gaps = Vec::new();
    for (i, r) in ratios.iter().enumerate().filter(|(_, r)| **r <= LOW_RATIO + 1e-12) {
        let diffs: Vec<f64> = full.iter().zip(&none).map(|(a, b)| a[i] - b[i]).collect();
        let m = median(&diffs);
        ok &= m >= 0.05;
        gaps.push(format!("{r}:{m:+.3}"));
    }
    let full_curve = median_curve(&full);
    let none_curve = median_curve(&none);
    let first_full = first_ratio_reaching(ratios, &full_curve, 0.5);
    let first_none = first_ratio_reaching(ratios, &none_curve, 0.5);
    let earlier = match (first_full, first_none) {
        (Some(a), Some(b)) => a < b,
        (Some(_), None) => true,
        _ => false,
    };
    Outcome {
        pass: ok && earlier,
        detail: format!(
            "median gap per ratio [{}] (need >= +0.05); first ratio reaching 0.5: onset {} vs no-onset {}",
            gaps.join(" "),
            fmt_ratio(first_full),
            fmt_ratio(first_none)
        ),
    }
}

fn ablation(reports: &[CvReport]) -> Outcome {
    let low = |rep: Rep| {
        median(
            &reports
                .iter()
                .map(|r| r.get(rep.name()).unwrap().table.low_ratio_mean(LOW_RATIO))
                .collect::<Vec<_>>(),
        )
    };
    let full = low(Rep::HistogramPlusMeanMax);
    let hist = low(Rep::HistogramOnly);
    let mm = low(Rep::MeanMaxOnly);
    let raw = low(Rep::RawPriorFrames);
    let none = low(Rep::NoOnset);
    Outcome {
        pass: full >= hist && full >= mm && raw <= none + 0.02,
        detail: format!(
            "low-ratio mean AP: full {full:.3}, histogram only {hist:.3}, mean/max only {mm:.3}, raw prior {raw:.3}, no onset {none:.3}"
        ),
    }
}

fn null_control() -> Outcome {
    let methods = [Method::Early(Rep::HistogramPlusMeanMax), Method::Early(Rep::NoOnset)];
    let reports = sweep("NO_ONSET_CONTROL", &methods);
    let full = mean_curves(&reports, Rep::HistogramPlusMeanMax.name());
    let none = mean_curves(&reports, Rep::NoOnset.name());
    let avg = |c: &Vec<f64>| c.iter().sum::<f64>() / c.len() as f64;
    let diffs: Vec<f64> = full.iter().zip(&none).map(|(a, b)| avg(a) - avg(b)).collect();
    let m = median(&diffs);
    let per_ratio: Vec<String> = (0..full[0].len())
        .map(|i| {
            let d: Vec<f64> = full.iter().zip(&none).map(|(a, b)| a[i] - b[i]).collect();
            format!("{:+.3}", median(&d))
        })
        .collect();
    Outcome {
        pass: m.abs() <= 0.03,
        detail: format!(
            "median difference of sweep-averaged mean AP {m:+.4} (limit 0.03); per-ratio medians [{}]",
            per_ratio.join(" ")
        ),
    }
}

fn timing() -> Outcome {
    let (model, ds) = reference_setup(1);
    let stream = ds.streams.last().unwrap();
    let state = StreamState::for_model(&model, stream).unwrap();
    let shape = (
        model.templates.len(),
        model.classes.main.len(),
        model.bank.progress_levels.len(),
        model.durations[0].len(),
        model.vocabulary(),
    );
    let p = Percentiles::of(&frame_times(&model, &state, 5));
    let rows = scaling_table(&model, &state, 7);
    let factor = |name: &str| rows.iter().find(|r| r.variant == name).unwrap().factor;
    let (fl, fh) = (factor("double_levels"), factor("double_hypotheses"));
    let in_band = |f: f64| (1.5..=2.5).contains(&f);
    Outcome {
        pass: shape == (4, 5, 10, 3, 64) && p.p50 <= 5e-3 && in_band(fl) && in_band(fh),
        detail: format!(
            "median {:.4} ms/frame at K={} classes={} |d|={} R={} W={} (limit 5 ms); |d| 5->10 x{fl:.2}, R 3->6 x{fh:.2} (band 1.5..2.5)",
            p.p50 * 1e3,
            shape.0,
            shape.1,
            shape.2,
            shape.3,
            shape.4
        ),
    }
}

fn onset(args: &[&str], dir: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_onset"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(String::from_utf8_lossy(&out.stderr).trim().to_string())
    }
}

fn pipeline(dir: &Path) -> Result<(), String> {
    onset(&["gen", "--preset", "STRONG_ONSET", "--seed", "7", "--out", "data"], dir)?;
    onset(&["train", "--data", "data", "--seed", "7", "--out-model", "model/model.json"], dir)?;
    onset(
        &["detect", "--model", "model/model.json", "--stream", "data/streams/s00_00.jsonl", "--out", "detect/detections.json"],
        dir,
    )?;
    onset(&["eval", "--model", "model/model.json", "--data", "data", "--out-dir", "eval"], dir)?;
    onset(&["eval", "--cv", "--data", "data", "--out-dir", "cv"], dir)
}

fn files(root: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    if let Err(e) = pipeline(a.path()).and_then(|_| pipeline(b.path())) {
        return Outcome {
            pass: false,
            detail: format!("pipeline failed: {e}"),
        };
    }
    let fa = files(a.path());
    let fb = files(b.path());
    let differing: Vec<String> = fa
        .iter()
        .filter(|f| std::fs::read(a.path().join(f)).ok() != std::fs::read(b.path().join(f)).ok())
        .map(|f| f.display().to_string())
        .collect();
    Outcome {
        pass: fa == fb && differing.is_empty() && !fa.is_empty(),
        detail: format!("{} files compared, {} differ {:?}", fa.len(), differing.len(), differing),
    }
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, what: &'static str, f: &dyn Fn() -> Outcome| {
        let start = Instant::now();
        let o = f();
        println!(
            "criterion {n} [{what}]: {} ({}; {:.0}s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
        results.push((n, what, o));
    };

    report(1, "exactness", &exactness);
    report(2, "oracle equivalence", &oracles);
    report(6, "per-frame cost", &timing);

    let start = Instant::now();
    let methods: Vec<Method> = [Rep::HistogramPlusMeanMax, Rep::NoOnset, Rep::HistogramOnly, Rep::MeanMaxOnly, Rep::RawPriorFrames]
        .into_iter()
        .map(Method::Early)
        .collect();
    let strong = sweep("STRONG_ONSET", &methods);
    let ratios = RunConfig::default().ratios;
    println!("STRONG_ONSET sweep over {SEEDS} seeds took {:.0}s", start.elapsed().as_secs_f64());
    for m in &methods {
        let curve = median_curve(&mean_curves(&strong, &m.name()));
        let cells: Vec<String> = curve.iter().map(|v| format!("{v:.3}")).collect();
        println!("  median mean AP {:<24} [{}]", m.name(), cells.join(" "));
    }
    let limit = start.elapsed().as_secs_f64() < 1800.0;
    report(3, "onset context helps early", &|| {
        let o = core_claim(&strong, &ratios);
        Outcome {
            pass: o.pass && limit,
            detail: o.detail,
        }
    });
    report(4, "representation ablation", &|| ablation(&strong));
    report(5, "null control", &null_control);
    report(7, "determinism", &determinism);

    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
