//! Slow reference implementations used to cross-check the fast paths.
//! Each one recomputes from raw inputs with plain loops and shares no code
//! with the library beyond type definitions.

#![allow(clippy::needless_range_loop)]

use crate::codebook::Word;
use crate::detector::DetectorModel;
use crate::onset::OnsetTemplate;
use crate::signature::{CascadeConfig, OnsetRepresentation, RAW_PRIOR_FRAMES};

/// Nearest center by explicit squared distance, lowest index on ties.
pub fn quantize(frames: &[Vec<f64>], centers: &[Vec<f64>]) -> Vec<Word> {
    frames
        .iter()
        .map(|x| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (i, c) in centers.iter().enumerate() {
                let mut d = 0.0;
                for j in 0..x.len() {
                    d += (x[j] - c[j]) * (x[j] - c[j]);
                }
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            best as Word
        })
        .collect()
}

/// Normalized word counts over `[t1, t2]`.
pub fn histogram(words: &[Word], vocabulary: usize, t1: usize, t2: usize) -> Vec<f64> {
    let mut h = vec![0.0; vocabulary];
    for &w in &words[t1..=t2] {
        h[w as usize] += 1.0;
    }
    let n = (t2 - t1 + 1) as f64;
    h.iter().map(|c| c / n).collect()
}

pub fn response(words: &[Word], vocabulary: usize, tmpl: &OnsetTemplate, t: usize) -> f64 {
    if t + 1 < *tmpl.durations.iter().min().unwrap() {
        return 0.0;
    }
    let mut best = f64::NEG_INFINITY;
    for &r in &tmpl.durations {
        let t1 = (t + 1).saturating_sub(r);
        let h = histogram(words, vocabulary, t1, t);
        let mut d = 0.0;
        for w in 0..vocabulary {
            d += (tmpl.mean[w] - h[w]).powi(2);
        }
        if 1.0 - d > best {
            best = 1.0 - d;
        }
    }
    best.clamp(0.0, 1.0)
}

pub fn response_series(words: &[Word], vocabulary: usize, tmpl: &OnsetTemplate) -> Vec<f64> {
    (0..words.len()).map(|t| response(words, vocabulary, tmpl, t)).collect()
}

/// Node spans of the cascade in post-order, built level by level as heap
/// indices and then walked.
fn spans(t: usize, cfg: &CascadeConfig) -> Vec<(i64, i64)> {
    let n = (1usize << cfg.depth) - 1;
    let mut heap = vec![(0i64, 0i64); n];
    heap[0] = (t as i64 - cfg.window as i64 + 1, t as i64);
    for i in 0..n {
        let (a, b) = heap[i];
        let mid = ((a + b) as f64 / 2.0).floor() as i64;
        if 2 * i + 2 < n {
            heap[2 * i + 1] = (a, mid);
            heap[2 * i + 2] = (mid + 1, b);
        }
    }
    fn walk(i: usize, n: usize, heap: &[(i64, i64)], out: &mut Vec<(i64, i64)>) {
        if 2 * i + 2 < n {
            walk(2 * i + 1, n, heap, out);
            walk(2 * i + 2, n, heap, out);
        }
        out.push(heap[i]);
    }
    let mut out = Vec::new();
    walk(0, n, &heap, &mut out);
    out
}

fn value(g: &[f64], t: i64) -> f64 {
    if t < 0 {
        0.0
    } else {
        g[t as usize]
    }
}

fn counts(g: &[f64], a: i64, b: i64, s: usize) -> (u32, u32) {
    let mut plus = 0;
    let mut minus = 0;
    let mut t = a;
    while t <= b {
        if t >= 0 && value(g, t) - value(g, t - s as i64) > 0.0 {
            plus += 1;
        } else {
            minus += 1;
        }
        t += 1;
    }
    (plus, minus)
}

/// `[h+, h-]` per node per step, steps outermost.
pub fn cascade_histogram(g: &[f64], t: usize, cfg: &CascadeConfig) -> Vec<u32> {
    let sp = spans(t, cfg);
    let mut out = Vec::new();
    for &s in &cfg.steps {
        for &(a, b) in &sp {
            let (p, m) = counts(g, a, b, s);
            out.push(p);
            out.push(m);
        }
    }
    out
}

fn mean_max(g: &[f64], t: usize, window: usize) -> (f64, f64) {
    let mut sum = 0.0;
    let mut max = 0.0f64;
    for i in 0..window as i64 {
        let v = value(g, t as i64 - i);
        sum += v;
        max = max.max(v);
    }
    (sum / window as f64, max)
}

fn context(series: &[Vec<f64>], words: &[Word], vocabulary: usize, t: usize, t1: usize, rep: OnsetRepresentation, cfg: &CascadeConfig) -> Vec<f64> {
    let mut hist = Vec::new();
    for g in series {
        for &s in &cfg.steps {
            for &(a, b) in &spans(t, cfg) {
                let (p, m) = counts(g, a, b, s);
                let len = (b - a + 1) as f64;
                hist.push(p as f64 / len);
                hist.push(m as f64 / len);
            }
        }
    }
    let stats: Vec<(f64, f64)> = series.iter().map(|g| mean_max(g, t, cfg.window)).collect();
    let mm: Vec<f64> = stats.iter().map(|s| s.0).chain(stats.iter().map(|s| s.1)).collect();
    match rep {
        OnsetRepresentation::HistogramPlusMeanMax => hist.into_iter().chain(mm).collect(),
        OnsetRepresentation::HistogramOnly => hist,
        OnsetRepresentation::MeanMaxOnly => mm,
        OnsetRepresentation::RawPriorFrames => {
            if t1 == 0 {
                vec![0.0; vocabulary]
            } else {
                histogram(words, vocabulary, t1.saturating_sub(RAW_PRIOR_FRAMES), t1 - 1)
            }
        }
        OnsetRepresentation::NoOnset => Vec::new(),
    }
}

/// The full signature vector at `t`.
pub fn signature_vector(series: &[Vec<f64>], t: usize, cfg: &CascadeConfig) -> Vec<f64> {
    context(series, &[], 0, t, t, OnsetRepresentation::HistogramPlusMeanMax, cfg)
}

/// Early-detection score of `class` at `t`, from raw frames.
pub fn score_frame(model: &DetectorModel, frames: &[Vec<f64>], t: usize, class: usize) -> f64 {
    let w = model.codebook.centers.len();
    let words = quantize(&frames[..=t], &model.codebook.centers);
    let series: Vec<Vec<f64>> = model.templates.iter().map(|k| response_series(&words, w, k)).collect();
    let prior = &model.prior;
    let mix: f64 = if prior.intentions.is_empty() {
        1.0
    } else {
        (0..prior.intentions.len())
            .map(|i| prior.intention_prior[i] * prior.class_given_intention[i][class].powf(prior.weight))
            .sum()
    };
    let mut best = 0.0f64;
    for (li, &d) in model.bank.progress_levels.iter().enumerate() {
        let clf = &model.bank.classifiers[class * model.bank.progress_levels.len() + li];
        for &len in &model.durations[class] {
            let offset = (d * len as f64 + 0.5 + 1e-9).floor() as usize;
            if offset > t {
                continue;
            }
            let t1 = t - offset;
            let mut x = if model.layout.use_bow {
                histogram(&words, w, t1, t)
            } else {
                vec![0.0; w]
            };
            x.extend(context(&series, &words, w, t, t1, model.layout.representation, &model.cascade));
            let mut z = clf.bias;
            for j in 0..x.len() {
                z += clf.weights[j] * x[j];
            }
            let p = 1.0 / (1.0 + (-(clf.platt_a * z + clf.platt_b)).exp());
            let (m, s) = (prior.mean[class], prior.std[class]);
            let log_n = -((len as f64 - m).powi(2)) / (2.0 * s * s) - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
            let score = p * (prior.weight * log_n).exp() * mix;
            best = best.max(score);
        }
    }
    best
}

/// Average precision as the mean, over true positives, of the precision at
/// that detection's score, scaled by the recalled fraction.
pub fn average_precision(labeled: &[(f64, bool)], n_gt: usize) -> f64 {
    let mut total = 0.0;
    for &(s, tp) in labeled {
        if !tp {
            continue;
        }
        let above: Vec<&(f64, bool)> = labeled.iter().filter(|(o, _)| *o >= s).collect();
        let hits = above.iter().filter(|(_, t)| *t).count();
        total += hits as f64 / above.len() as f64;
    }
    total / n_gt as f64
}
