//! Randomized instances and the exactness and oracle comparisons run on them.
//! Every check takes a seed, builds its own instance and returns a description
//! of the first disagreement it finds.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classifier::{ClassifierBank, LinearProbClassifier};
use crate::codebook::{Codebook, IntegralHistogram, Word};
use crate::detector::{
    score_frame, Detector, DetectorModel, DurationPrior, DurationRule, FeatureLayout, OnlineDetector, StreamState,
};
use crate::evaluation::{average_precision, pr_curve};
use crate::onset::{signatures_from_histogram, OnsetSignatureSet, OnsetTemplate};
use crate::oracle;
use crate::signature::{cascade_histogram, signature_vector, window_spans, CascadeConfig, OnsetRepresentation, SignatureIndex};
use crate::timeline::{ClassTable, FeatureStream, Interval};

pub type CheckResult = Result<(), String>;
pub type Check = fn(u64) -> CheckResult;

/// Limits of the instances handed to the oracle comparisons.
pub const MAX_FRAMES: usize = 300;
pub const MAX_VOCABULARY: usize = 8;
pub const MAX_ONSETS: usize = 3;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn close(a: f64, b: f64, tol: f64, what: &str) -> CheckResult {
    if a.is_finite() && b.is_finite() && relative_error(a, b) <= tol {
        Ok(())
    } else {
        Err(format!("{what}: {a} vs {b}"))
    }
}

pub fn random_words(rng: &mut impl Rng, len: usize, vocabulary: usize) -> Vec<Word> {
    // Runs of repeated words make responses plateau, which exercises ties.
    let mut out = Vec::with_capacity(len);
    while out.len() < len {
        let w = rng.random_range(0..vocabulary) as Word;
        let run = rng.random_range(1..6).min(len - out.len());
        out.extend(std::iter::repeat_n(w, run));
    }
    out
}

/// A response-like series in `[0, 1]` with plateaus and leading zeros.
pub fn random_series(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    let mut g = Vec::with_capacity(len);
    let mut v = 0.0;
    for _ in 0..len {
        match rng.random_range(0..4) {
            0 => {}
            1 => v = (rng.random_range(0..8) as f64) / 8.0,
            _ => v = rng.random::<f64>(),
        }
        g.push(v);
    }
    g
}

pub fn random_cascade(rng: &mut impl Rng) -> CascadeConfig {
    let depth = rng.random_range(1..=4);
    let window = rng.random_range((1usize << (depth - 1)).max(2)..=60);
    let mut steps: Vec<usize> = (1..=12).collect();
    steps.shuffle(rng);
    steps.truncate(rng.random_range(1..=3));
    CascadeConfig { window, depth, steps }
}

pub fn random_templates(rng: &mut impl Rng, k: usize, vocabulary: usize) -> Vec<OnsetTemplate> {
    (0..k)
        .map(|i| {
            let raw: Vec<f64> = (0..vocabulary).map(|_| rng.random::<f64>()).collect();
            let sum: f64 = raw.iter().sum();
            let mut durations: Vec<usize> = (0..rng.random_range(1..=3)).map(|_| rng.random_range(2..30)).collect();
            durations.sort_unstable();
            durations.dedup();
            OnsetTemplate {
                class: format!("o{i}"),
                mean: raw.iter().map(|v| v / sum).collect(),
                durations,
            }
        })
        .collect()
}

pub fn random_frames(rng: &mut impl Rng, len: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..len).map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
}

const REPRESENTATIONS: [OnsetRepresentation; 5] = [
    OnsetRepresentation::HistogramPlusMeanMax,
    OnsetRepresentation::HistogramOnly,
    OnsetRepresentation::MeanMaxOnly,
    OnsetRepresentation::RawPriorFrames,
    OnsetRepresentation::NoOnset,
];

/// An untrained but well-formed detector with random parameters.
pub fn random_model(rng: &mut impl Rng, vocabulary: usize, n_onsets: usize, dim: usize) -> DetectorModel {
    let n_classes = rng.random_range(1..=3);
    let codebook = Codebook {
        centers: random_frames(rng, vocabulary, dim),
    };
    let templates = random_templates(rng, n_onsets, vocabulary);
    let cascade = random_cascade(rng);
    let layout = FeatureLayout {
        representation: REPRESENTATIONS[rng.random_range(0..REPRESENTATIONS.len())],
        use_bow: rng.random_range(0..4) != 0,
    };
    let mut levels: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
    levels.shuffle(rng);
    levels.truncate(rng.random_range(1..=4));
    levels.sort_by(f64::total_cmp);
    let input = layout.input_dim(vocabulary, n_onsets, &cascade);
    let classes: Vec<String> = (0..n_classes).map(|c| format!("c{c}")).collect();
    let classifiers = (0..n_classes * levels.len())
        .map(|_| LinearProbClassifier {
            weights: (0..input).map(|_| rng.random_range(-3.0..3.0)).collect(),
            bias: rng.random_range(-1.0..1.0),
            platt_a: rng.random_range(-3.0..-0.2),
            platt_b: rng.random_range(-1.0..1.0),
        })
        .collect();
    let intentions: Vec<String> = (0..rng.random_range(0..3)).map(|i| format!("i{i}")).collect();
    let class_given_intention = intentions
        .iter()
        .map(|_| {
            let row: Vec<f64> = (0..n_classes).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = row.iter().sum();
            row.iter().map(|v| v / s).collect()
        })
        .collect();
    let prior = DurationPrior {
        mean: (0..n_classes).map(|_| rng.random_range(4.0..60.0)).collect(),
        std: (0..n_classes).map(|_| rng.random_range(2.0..15.0)).collect(),
        intention_prior: vec![1.0 / intentions.len().max(1) as f64; intentions.len()],
        intentions,
        class_given_intention,
        weight: rng.random_range(0.2..2.0),
    };
    let durations = DurationRule::default().hypotheses(&prior);
    DetectorModel {
        classes: ClassTable {
            onset: templates.iter().map(|t| t.class.clone()).collect(),
            main: classes.clone(),
        },
        codebook,
        templates,
        cascade,
        layout,
        bank: ClassifierBank {
            classes,
            progress_levels: levels,
            classifiers,
        },
        prior,
        durations,
        nms_fraction: 0.5,
    }
}

fn random_interval(rng: &mut impl Rng, len: usize) -> Interval {
    let a = rng.random_range(0..len);
    let b = rng.random_range(a..len);
    Interval { t1: a, t2: b }
}

// ---- exactness ----

/// Interval counts from the integral histogram equal direct counting, and
/// incremental construction equals batch construction.
pub fn integral_histogram_identity(seed: u64) -> CheckResult {
    let mut r = rng(seed);
    let vocabulary = r.random_range(1..=40);
    let len = r.random_range(1..=400);
    let words = random_words(&mut r, len, vocabulary);
    let ih = IntegralHistogram::from_words(&words, vocabulary).map_err(|e| e.to_string())?;
    let mut grown = IntegralHistogram::new(vocabulary);
    for &w in &words {
        grown.push(w).map_err(|e| e.to_string())?;
    }
    if grown != ih {
        return Err("incremental histogram differs from batch".into());
    }
    for _ in 0..20 {
        let iv = random_interval(&mut r, len);
        let fast = ih.counts(&iv).map_err(|e| e.to_string())?;
        let mut slow = vec![0u32; vocabulary];
        for &w in &words[iv.t1..=iv.t2] {
            slow[w as usize] += 1;
        }
        if fast != slow {
            return Err(format!("counts on {iv:?} differ"));
        }
    }
    Ok(())
}

/// Every internal cascade node's counts are the sums of its two children's.
pub fn cascade_partition(seed: u64) -> CheckResult {
    let mut r = rng(seed);
    let cfg = random_cascade(&mut r);
    let n = r.random_range(1..=250);
    let g = random_series(&mut r, n);
    let t = r.random_range(0..g.len());
    let h = cascade_histogram(&g, t, &cfg);
    let nodes = cfg.n_nodes();
    for (si, block) in h.chunks(2 * nodes).enumerate() {
        // Post-order: a subtree of depth `d` rooted at index `root` has its
        // left subtree ending at `root - 1 - size(d - 1)` and its right at `root - 1`.
        fn walk(block: &[u32], root: usize, depth: usize, si: usize) -> CheckResult {
            if depth == 1 {
                return Ok(());
            }
            let sub = (1usize << (depth - 1)) - 1;
            let right = root - 1;
            let left = root - 1 - sub;
            for j in 0..2 {
                if block[2 * root + j] != block[2 * left + j] + block[2 * right + j] {
                    return Err(format!("step {si}: node {root} is not the sum of {left} and {right}"));
                }
            }
            walk(block, left, depth - 1, si)?;
            walk(block, right, depth - 1, si)
        }
        walk(block, nodes - 1, cfg.depth, si)?;
    }
    Ok(())
}

/// `h+ + h-` equals the node length for every node and step.
pub fn count_conservation(seed: u64) -> CheckResult {
    let mut r = rng(seed);
    let cfg = random_cascade(&mut r);
    let n = r.random_range(1..=250);
    let g = random_series(&mut r, n);
    let t = r.random_range(0..g.len());
    let h = cascade_histogram(&g, t, &cfg);
    let spans = window_spans(t, &cfg);
    for (si, block) in h.chunks(2 * cfg.n_nodes()).enumerate() {
        for (n, &(a, b)) in spans.iter().enumerate() {
            let len = (b - a + 1) as u32;
            if block[2 * n] + block[2 * n + 1] != len {
                return Err(format!("step {si}, node {n}: {} + {} != {len}", block[2 * n], block[2 * n + 1]));
            }
        }
    }
    let expected: u32 = cfg.window as u32;
    let root = spans.last().unwrap();
    if (root.1 - root.0 + 1) as u32 != expected {
        return Err("root span is not the window".into());
    }
    Ok(())
}

/// The signature vector has length `K * |s| * (2^l - 1) * 2 + 2K` at every frame.
pub fn vector_length(seed: u64) -> CheckResult {
    let mut r = rng(seed);
    let cfg = random_cascade(&mut r);
    let k = r.random_range(0..=5);
    let len = r.random_range(1..=120);
    let sigs = OnsetSignatureSet {
        series: (0..k).map(|_| random_series(&mut r, len)).collect(),
    };
    let expected = k * cfg.steps.len() * ((1 << cfg.depth) - 1) * 2 + 2 * k;
    let index = SignatureIndex::from_signatures(&sigs, &cfg);
    for _ in 0..5 {
        let t = r.random_range(0..len);
        let a = signature_vector(&sigs, t, &cfg).values.len();
        let b = index.vector(t, &cfg).values.len();
        if a != expected || b != expected {
            return Err(format!("lengths {a}, {b}; expected {expected}"));
        }
    }
    Ok(())
}

/// Frame-by-frame detection reproduces batch scores bit for bit, along with
/// the chosen hypotheses and the peak detections.
pub fn online_offline(seed: u64) -> CheckResult {
    let mut r = rng(seed);
    let vocabulary = r.random_range(1..=12);
    let k = r.random_range(0..=3);
    let dim = r.random_range(1..=4);
    let model = random_model(&mut r, vocabulary, k, dim);
    let n = r.random_range(1..=150);
    let frames = random_frames(&mut r, n, dim);
    let stream = FeatureStream::new("s", 15.0, frames.clone()).map_err(|e| e.to_string())?;
    let state = StreamState::for_model(&model, &stream).map_err(|e| e.to_string())?;
    let batch = Detector::new(&model).map_err(|e| e.to_string())?.traces(&state);
    let mut online = OnlineDetector::new(&model).map_err(|e| e.to_string())?;
    for f in &frames {
        online.push(f).map_err(|e| e.to_string())?;
    }
    for (c, (a, b)) in batch.iter().zip(online.traces()).enumerate() {
        for (t, (x, y)) in a.iter().zip(b).enumerate() {
            if x.score.to_bits() != y.score.to_bits() || x.interval != y.interval || x.level != y.level {
                return Err(format!("class {c}, frame {t}: {x:?} vs {y:?}"));
            }
        }
    }
    let batch_dets = crate::detector::detect_prepared(&model, "s", &state, Default::default())
        .map_err(|e| e.to_string())?
        .detections;
    if online.finish("s").detections != batch_dets {
        return Err("peak detections differ".into());
    }
    Ok(())
}

// ---- oracle equivalence ----

/// Onset responses `G^k(t)` against direct histogram distances.
pub fn response_matches(seed: u64) -> CheckResult {
    let mut r = rng(seed);
    let vocabulary = r.random_range(1..=MAX_VOCABULARY);
    let k = r.random_range(1..=MAX_ONSETS);
    let n = r.random_range(1..=MAX_FRAMES);
    let words = random_words(&mut r, n, vocabulary);
    let templates = random_templates(&mut r, k, vocabulary);
    let ih = IntegralHistogram::from_words(&words, vocabulary).map_err(|e| e.to_string())?;
    let fast = signatures_from_histogram(&ih, &templates).map_err(|e| e.to_string())?;
    for (tmpl, series) in templates.iter().zip(&fast.series) {
        let slow = oracle::response_series(&words, vocabulary, tmpl);
        for (t, (&a, &b)) in series.iter().zip(&slow).enumerate() {
            close(a, b, 1e-9, &format!("G[{}]({t})", tmpl.class))?;
        }
    }
    Ok(())
}

/// Cascade histograms and full signature vectors, including the prefix-count
/// fast path, against node-by-node counting.
pub fn cascade_matches(seed: u64) -> CheckResult {
    let mut r = rng(seed);
    let cfg = random_cascade(&mut r);
    let k = r.random_range(1..=MAX_ONSETS);
    let len = r.random_range(1..=MAX_FRAMES);
    let series: Vec<Vec<f64>> = (0..k).map(|_| random_series(&mut r, len)).collect();
    let sigs = OnsetSignatureSet { series: series.clone() };
    let index = SignatureIndex::from_signatures(&sigs, &cfg);
    for _ in 0..5 {
        let t = r.random_range(0..len);
        for g in &series {
            let a = cascade_histogram(g, t, &cfg);
            let b = oracle::cascade_histogram(g, t, &cfg);
            if a != b {
                return Err(format!("cascade histogram at t={t}: {a:?} vs {b:?}"));
            }
        }
        let slow = oracle::signature_vector(&series, t, &cfg);
        for fast in [signature_vector(&sigs, t, &cfg).values, index.vector(t, &cfg).values] {
            if fast.len() != slow.len() {
                return Err("signature vector length".into());
            }
            for (i, (&a, &b)) in fast.iter().zip(&slow).enumerate() {
                close(a, b, 1e-9, &format!("x({t})[{i}]"))?;
            }
        }
    }
    Ok(())
}

/// The early-detection score against a from-scratch evaluation of the
/// max over progress levels and durations.
pub fn score_frame_matches(seed: u64) -> CheckResult {
    let mut r = rng(seed);
    let vocabulary = r.random_range(1..=MAX_VOCABULARY);
    let k = r.random_range(0..=MAX_ONSETS);
    let dim = r.random_range(1..=3);
    let model = random_model(&mut r, vocabulary, k, dim);
    let n = r.random_range(1..=MAX_FRAMES);
    let frames = random_frames(&mut r, n, dim);
    let stream = FeatureStream::new("s", 15.0, frames.clone()).map_err(|e| e.to_string())?;
    let state = StreamState::for_model(&model, &stream).map_err(|e| e.to_string())?;
    for _ in 0..3 {
        let t = r.random_range(0..frames.len());
        let c = r.random_range(0..model.classes.main.len());
        let fast = score_frame(&model, &state, t, c).map_err(|e| e.to_string())?.score;
        let slow = oracle::score_frame(&model, &frames, t, c);
        close(fast, slow, 1e-9, &format!("score({t}, {c})"))?;
    }
    Ok(())
}

/// Average precision against the mean-precision-at-each-hit formula.
pub fn ap_matches(seed: u64) -> CheckResult {
    let mut r = rng(seed);
    let n = r.random_range(0..60);
    // Coarse scores so that ties are common.
    let labeled: Vec<(f64, bool)> = (0..n)
        .map(|_| (r.random_range(0..12) as f64 / 4.0, r.random_bool(0.4)))
        .collect();
    let hits = labeled.iter().filter(|l| l.1).count();
    let n_gt = hits + r.random_range(0..5);
    if n_gt == 0 {
        return Ok(());
    }
    let mut sorted = labeled.clone();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let fast = average_precision(&pr_curve(&sorted, n_gt).map_err(|e| e.to_string())?);
    let slow = oracle::average_precision(&labeled, n_gt);
    close(fast, slow, 1e-9, "AP")
}

/// Runs `check` on `cases` seeds derived from `base`, stopping at the first failure.
pub fn run(check: Check, cases: usize, base: u64) -> Result<usize, String> {
    for i in 0..cases as u64 {
        let seed = crate::derive_seed(base, &[i]);
        check(seed).map_err(|e| format!("seed {seed}: {e}"))?;
    }
    Ok(cases)
}

pub const EXACTNESS: [(&str, Check); 5] = [
    ("integral histogram identity", integral_histogram_identity),
    ("cascade partition", cascade_partition),
    ("count conservation", count_conservation),
    ("signature vector length", vector_length),
    ("online equals offline", online_offline),
];

pub const ORACLES: [(&str, Check); 4] = [
    ("onset response", response_matches),
    ("cascade histogram", cascade_matches),
    ("score_frame", score_frame_matches),
    ("average precision", ap_matches),
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_check_passes_on_a_few_seeds() {
        for (name, check) in EXACTNESS.iter().chain(ORACLES.iter()) {
            run(*check, 30, 99).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }
}
