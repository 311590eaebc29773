//! Per-frame timing of the detection loop on precomputed stream state, and
//! model variants for measuring how the cost scales with the number of
//! progress levels and duration hypotheses.

use std::time::Instant;

use onset_core::classifier::ClassifierBank;
use onset_core::detector::{Detector, DurationRule};
use onset_core::synthgen::{preset, sample_scenario, ScenarioConfig};
use onset_core::training::TrainingContext;
use onset_core::{Dataset, DetectorModel, FeatureLayout, RunConfig, StreamState};

/// Copy of `model` with `n` evenly spaced progress levels; each new level
/// reuses the classifier of the nearest trained level.
pub fn with_levels(model: &DetectorModel, n: usize) -> DetectorModel {
    let old = &model.bank.progress_levels;
    let levels: Vec<f64> = (1..=n).map(|i| i as f64 / n as f64).collect();
    let mut classifiers = Vec::with_capacity(model.classes.main.len() * n);
    for c in 0..model.classes.main.len() {
        for &d in &levels {
            let nearest = (0..old.len())
                .min_by(|&a, &b| (old[a] - d).abs().total_cmp(&(old[b] - d).abs()))
                .unwrap_or(0);
            classifiers.push(model.bank.get(c, nearest).clone());
        }
    }
    DetectorModel {
        bank: ClassifierBank {
            classes: model.bank.classes.clone(),
            progress_levels: levels,
            classifiers,
        },
        ..model.clone()
    }
}

/// Copy of `model` with `r` duration hypotheses per class, offsets spread
/// evenly over one standard deviation either side of the mean.
pub fn with_hypotheses(model: &DetectorModel, r: usize) -> DetectorModel {
    let sigma_offsets = if r == 1 {
        vec![0.0]
    } else {
        (0..r).map(|i| -1.0 + 2.0 * i as f64 / (r - 1) as f64).collect()
    };
    let rule = DurationRule {
        sigma_offsets,
        ..DurationRule::default()
    };
    DetectorModel {
        durations: rule.hypotheses(&model.prior),
        ..model.clone()
    }
}

/// Seconds spent scoring every class at each frame, `repeat` passes over the stream.
pub fn frame_times(model: &DetectorModel, state: &StreamState, repeat: usize) -> Vec<f64> {
    let mut det = Detector::new(model).expect("consistent model");
    let mut out = Vec::with_capacity(repeat * state.len());
    for _ in 0..repeat {
        for t in 0..state.len() {
            let start = Instant::now();
            let s = det.score_all(state, t);
            out.push(start.elapsed().as_secs_f64());
            std::hint::black_box(s);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Percentiles {
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub mean: f64,
}

impl Percentiles {
    pub fn of(samples: &[f64]) -> Self {
        assert!(!samples.is_empty(), "no timing samples");
        let mut v = samples.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| v[((v.len() - 1) as f64 * p).round() as usize];
        Self {
            p50: q(0.5),
            p90: q(0.9),
            p99: q(0.99),
            mean: v.iter().sum::<f64>() / v.len() as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRow {
    pub variant: String,
    pub levels: usize,
    pub hypotheses: usize,
    pub median: f64,
    /// Median relative to the baseline row.
    pub factor: f64,
}

/// Median per-frame time with `|d|` at 5 and 10 and `R` at 3 and 6. The
/// first row is the baseline (`|d|` 5, `R` 3).
pub fn scaling_table(model: &DetectorModel, state: &StreamState, repeat: usize) -> Vec<ScalingRow> {
    let variants = [("base", 5, 3), ("double_levels", 10, 3), ("double_hypotheses", 5, 6)];
    let models: Vec<DetectorModel> = variants
        .iter()
        .map(|&(_, l, r)| with_hypotheses(&with_levels(model, l), r))
        .collect();
    // Interleave passes so drift in machine load hits every variant alike.
    let mut samples = vec![Vec::new(); models.len()];
    for _ in 0..repeat {
        for (m, s) in models.iter().zip(samples.iter_mut()) {
            s.extend(frame_times(m, state, 1));
        }
    }
    let medians: Vec<f64> = samples.iter().map(|s| Percentiles::of(s).p50).collect();
    variants
        .iter()
        .zip(&medians)
        .map(|(&(name, l, r), &m)| ScalingRow {
            variant: name.to_string(),
            levels: l,
            hypotheses: r,
            median: m,
            factor: m / medians[0],
        })
        .collect()
}

/// A default-configuration model trained on a small STRONG_ONSET scenario,
/// with the prepared state of one of its streams.
pub fn reference_setup(seed: u64) -> (DetectorModel, Dataset) {
    let cfg = ScenarioConfig {
        n_sets: 2,
        streams_per_set: 4,
        ..preset("STRONG_ONSET").expect("known preset")
    };
    let ds = sample_scenario(&cfg, seed).expect("valid preset").dataset;
    let train: Vec<usize> = (0..ds.streams.len() - 1).collect();
    let ctx = TrainingContext::prepare(&ds, &train, &RunConfig::default()).expect("trainable scenario");
    let model = ctx.train_model(FeatureLayout::early(RunConfig::default().representation)).expect("trainable scenario");
    (model, ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variants_have_requested_shape() {
        let (model, ds) = reference_setup(1);
        let m = with_hypotheses(&with_levels(&model, 5), 6);
        m.check().unwrap();
        assert_eq!(m.bank.progress_levels.len(), 5);
        assert!(m.durations.iter().all(|d| d.len() == 6));
        let state = StreamState::for_model(&m, ds.streams.last().unwrap()).unwrap();
        assert_eq!(frame_times(&m, &state, 2).len(), 2 * state.len());
        let same = with_levels(&model, model.bank.progress_levels.len());
        assert_eq!(same.bank, model.bank);
    }

    #[test]
    fn percentiles_of_known_samples() {
        let p = Percentiles::of(&[5.0, 1.0, 3.0, 2.0, 4.0]);
        assert_eq!(p.p50, 3.0);
        assert_eq!(p.mean, 3.0);
        assert_eq!(p.p99, 5.0);
    }
}
