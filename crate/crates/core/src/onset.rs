//! Weak onset detectors.
//!
//! Each onset class is modelled by the mean normalized word histogram of its
//! training instances. The detector response at frame `t` is the best match,
//! over a handful of template durations `r`, between the template and the
//! histogram of the window `[t - r + 1, t]`:
//!
//! ```text
//! G(t) = clamp(max_r (1 - sum_i (m_i - v_i)^2), 0, 1)
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codebook::{quantize, Codebook, CodebookError, IntegralHistogram};
use crate::timeline::{ActivityKind, Dataset, FeatureStream};

pub const DEFAULT_N_DURATIONS: usize = 3;

#[derive(Debug, Error, PartialEq)]
pub enum OnsetError {
    #[error("onset classes without training instances: {0:?}")]
    MissingClasses(Vec<String>),
    #[error("histogram dimension {got} does not match template dimension {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("template for {0} has no durations")]
    NoDurations(String),
    #[error(transparent)]
    Codebook(#[from] CodebookError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnsetTemplate {
    pub class: String,
    /// Mean of the L1-normalized training histograms.
    pub mean: Vec<f64>,
    /// Candidate window lengths in frames, ascending.
    pub durations: Vec<usize>,
}

/// Linear-interpolation percentile of sorted data, `p` in `[0, 1]`.
pub(crate) fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// `n` durations evenly spaced between the 10th and 90th percentiles of the
/// observed instance lengths, rounded and deduplicated.
pub fn duration_set(lengths: &[usize], n: usize) -> Vec<usize> {
    let mut sorted: Vec<f64> = lengths.iter().map(|&l| l as f64).collect();
    sorted.sort_by(f64::total_cmp);
    let lo = percentile(&sorted, 0.1);
    let hi = percentile(&sorted, 0.9);
    let mut out: Vec<usize> = if n <= 1 {
        vec![((lo + hi) / 2.0).round() as usize]
    } else {
        (0..n)
            .map(|i| (lo + (hi - lo) * i as f64 / (n - 1) as f64).round() as usize)
            .collect()
    };
    for r in &mut out {
        *r = (*r).max(1);
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Fits one template per registered onset class from pre-quantized streams.
/// `hists[i]` must be the integral histogram of `ds.streams[train[i]]`.
pub fn fit_templates_from_histograms(
    ds: &Dataset,
    train: &[usize],
    hists: &[&IntegralHistogram],
    n_durations: usize,
) -> Result<Vec<OnsetTemplate>, OnsetError> {
    let vocabulary = hists.first().map_or(0, |h| h.vocabulary());
    let mut missing = Vec::new();
    let mut out = Vec::new();
    for class in &ds.classes.onset {
        let mut mean = vec![0.0; vocabulary];
        let mut lengths = Vec::new();
        for (slot, &si) in train.iter().enumerate() {
            for inst in ds.labels_for(&ds.streams[si].id) {
                if inst.kind != ActivityKind::Onset || &inst.class != class {
                    continue;
                }
                let h = crate::codebook::interval_histogram(hists[slot], &inst.interval, true)?;
                for (m, v) in mean.iter_mut().zip(&h) {
                    *m += v;
                }
                lengths.push(inst.interval.len());
            }
        }
        if lengths.is_empty() {
            missing.push(class.clone());
            continue;
        }
        let n = lengths.len() as f64;
        for m in &mut mean {
            *m /= n;
        }
        out.push(OnsetTemplate {
            class: class.clone(),
            mean,
            durations: duration_set(&lengths, n_durations),
        });
    }
    if !missing.is_empty() {
        return Err(OnsetError::MissingClasses(missing));
    }
    Ok(out)
}

/// Fits onset templates over every stream of `ds`.
pub fn fit_onset_templates(ds: &Dataset, cb: &Codebook, n_durations: usize) -> Result<Vec<OnsetTemplate>, OnsetError> {
    let hists = ds
        .streams
        .iter()
        .map(|s| IntegralHistogram::from_words(&quantize(s, cb)?, cb.vocabulary()))
        .collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&IntegralHistogram> = hists.iter().collect();
    let all: Vec<usize> = (0..ds.streams.len()).collect();
    fit_templates_from_histograms(ds, &all, &refs, n_durations)
}

/// Squared Euclidean distance between a normalized histogram and a template.
pub fn template_distance(hist: &[f64], tmpl: &OnsetTemplate) -> Result<f64, OnsetError> {
    if hist.len() != tmpl.mean.len() {
        return Err(OnsetError::Dimension {
            expected: tmpl.mean.len(),
            got: hist.len(),
        });
    }
    Ok(tmpl.mean.iter().zip(hist).map(|(m, v)| (m - v) * (m - v)).sum())
}

/// Detector response of one template at frame `t` of `ih`.
pub(crate) fn response_at(ih: &IntegralHistogram, t: usize, tmpl: &OnsetTemplate, scratch: &mut [f64]) -> f64 {
    let min_r = tmpl.durations[0];
    if t + 1 < min_r {
        return 0.0;
    }
    let mut best = f64::NEG_INFINITY;
    for &r in &tmpl.durations {
        let t1 = (t + 1).saturating_sub(r);
        ih.fill_normalized(t1, t, scratch);
        let d: f64 = tmpl.mean.iter().zip(scratch.iter()).map(|(m, v)| (m - v) * (m - v)).sum();
        best = best.max(1.0 - d);
    }
    best.clamp(0.0, 1.0)
}

/// Per-onset response series `G^k(t)`, one row per template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnsetSignatureSet {
    pub series: Vec<Vec<f64>>,
}

impl OnsetSignatureSet {
    pub fn n_onsets(&self) -> usize {
        self.series.len()
    }

    pub fn len(&self) -> usize {
        self.series.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// CSV with one column per onset class and one row per frame.
    pub fn to_csv(&self, classes: &[String]) -> String {
        let mut out = String::from("t");
        for c in classes {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for t in 0..self.len() {
            out.push_str(&t.to_string());
            for s in &self.series {
                out.push(',');
                out.push_str(&s[t].to_string());
            }
            out.push('\n');
        }
        out
    }
}

fn check_templates(templates: &[OnsetTemplate], vocabulary: usize) -> Result<(), OnsetError> {
    for t in templates {
        if t.durations.is_empty() {
            return Err(OnsetError::NoDurations(t.class.clone()));
        }
        if t.mean.len() != vocabulary {
            return Err(OnsetError::Dimension {
                expected: vocabulary,
                got: t.mean.len(),
            });
        }
    }
    Ok(())
}

pub fn signatures_from_histogram(
    ih: &IntegralHistogram,
    templates: &[OnsetTemplate],
) -> Result<OnsetSignatureSet, OnsetError> {
    check_templates(templates, ih.vocabulary())?;
    let mut scratch = vec![0.0; ih.vocabulary()];
    let series = templates
        .iter()
        .map(|tmpl| (0..ih.len()).map(|t| response_at(ih, t, tmpl, &mut scratch)).collect())
        .collect();
    Ok(OnsetSignatureSet { series })
}

/// Batch onset signatures of a whole stream.
pub fn compute_signatures(
    stream: &FeatureStream,
    cb: &Codebook,
    templates: &[OnsetTemplate],
) -> Result<OnsetSignatureSet, OnsetError> {
    let words = quantize(stream, cb)?;
    let ih = IntegralHistogram::from_words(&words, cb.vocabulary())?;
    signatures_from_histogram(&ih, templates)
}

/// Frame-at-a-time onset responses over a growing word sequence.
#[derive(Debug, Clone)]
pub struct OnlineSignatures {
    templates: Vec<OnsetTemplate>,
    hist: IntegralHistogram,
    series: Vec<Vec<f64>>,
    scratch: Vec<f64>,
}

impl OnlineSignatures {
    pub fn new(templates: Vec<OnsetTemplate>, vocabulary: usize) -> Result<Self, OnsetError> {
        check_templates(&templates, vocabulary)?;
        Ok(Self {
            series: vec![Vec::new(); templates.len()],
            templates,
            hist: IntegralHistogram::new(vocabulary),
            scratch: vec![0.0; vocabulary],
        })
    }

    /// Consumes the next frame's word and returns the responses at that frame.
    pub fn push(&mut self, word: crate::codebook::Word) -> Result<Vec<f64>, OnsetError> {
        self.hist.push(word)?;
        let t = self.hist.len() - 1;
        let mut out = Vec::with_capacity(self.templates.len());
        for (tmpl, s) in self.templates.iter().zip(&mut self.series) {
            let g = response_at(&self.hist, t, tmpl, &mut self.scratch);
            s.push(g);
            out.push(g);
        }
        Ok(out)
    }

    pub fn histogram(&self) -> &IntegralHistogram {
        &self.hist
    }

    pub fn signatures(&self) -> OnsetSignatureSet {
        OnsetSignatureSet {
            series: self.series.clone(),
        }
    }
}
