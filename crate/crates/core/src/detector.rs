//! Streaming early detector.
//!
//! At frame `t` the score of class `C` is
//!
//! ```text
//! max_d max_L  sum_I  F_(C,d)(BoW[t1, t] || x(t)) * exp(w * (log N(L; mu_C, sigma_C) + log P(C | I))) * P(I)
//! ```
//!
//! with `t1 = t - round(d * L)` and `t2 = t1 + L`: every progress level `d` of
//! the classifier bank is tried against every duration hypothesis `L` of the
//! class. The probability does not depend on the intention, so the intention
//! sum collapses to a per-class constant.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::ClassifierBank;
use crate::codebook::{Codebook, CodebookError, IntegralHistogram};
use crate::onset::{response_at, signatures_from_histogram, OnsetError, OnsetTemplate};
use crate::signature::{window_spans, CascadeConfig, OnsetRepresentation, SignatureIndex, RAW_PRIOR_FRAMES};
use crate::timeline::{round_half_up, ActivityKind, ClassTable, Dataset, FeatureStream, Interval};

#[derive(Debug, Error, PartialEq)]
pub enum DetectorError {
    #[error("interval {iv} outside stream of {len} frames")]
    OutOfRange { iv: Interval, len: usize },
    #[error("classifier bank has no progress level {0}")]
    MissingLevel(f64),
    #[error("model is inconsistent: {0}")]
    Inconsistent(String),
    #[error("unknown class {0}")]
    UnknownClass(String),
    #[error(transparent)]
    Codebook(#[from] CodebookError),
    #[error(transparent)]
    Onset(#[from] OnsetError),
}

/// Duration likelihoods and intention mixing for the prior term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationPrior {
    /// Per main class duration mean, frames.
    pub mean: Vec<f64>,
    /// Per main class duration standard deviation, frames.
    pub std: Vec<f64>,
    pub intentions: Vec<String>,
    /// `P(I)`.
    pub intention_prior: Vec<f64>,
    /// `P(C | I)`, indexed `[intention][class]`.
    pub class_given_intention: Vec<Vec<f64>>,
    /// Weight `w` of the log prior.
    pub weight: f64,
}

impl DurationPrior {
    /// Estimates duration Gaussians and add-one smoothed `P(C | I)` from the
    /// main-activity labels of the `train` streams. `P(I)` is uniform.
    pub fn fit(ds: &Dataset, train: &[usize], weight: f64, sigma_floor: f64) -> Self {
        let n_classes = ds.classes.main.len();
        let mut lengths = vec![Vec::new(); n_classes];
        let mut counts = vec![vec![0.0; n_classes]; ds.intentions.len()];
        for &si in train {
            let stream = &ds.streams[si];
            for inst in ds.labels_for(&stream.id) {
                if inst.kind != ActivityKind::Main {
                    continue;
                }
                let Some(c) = ds.classes.main_index(&inst.class) else { continue };
                lengths[c].push(inst.interval.len() as f64);
                if let Some(i) = ds.intention_of(stream, inst).and_then(|i| ds.intentions.iter().position(|x| x == i)) {
                    counts[i][c] += 1.0;
                }
            }
        }
        let (mean, std) = lengths
            .iter()
            .map(|l| {
                if l.is_empty() {
                    return (sigma_floor, sigma_floor);
                }
                let n = l.len() as f64;
                let m = l.iter().sum::<f64>() / n;
                let var = l.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
                (m, var.sqrt().max(sigma_floor))
            })
            .unzip();
        let class_given_intention = counts
            .iter()
            .map(|row| {
                let total: f64 = row.iter().sum::<f64>() + n_classes as f64;
                row.iter().map(|c| (c + 1.0) / total).collect()
            })
            .collect();
        let n_i = ds.intentions.len();
        Self {
            mean,
            std,
            intentions: ds.intentions.clone(),
            intention_prior: vec![1.0 / n_i as f64; n_i],
            class_given_intention,
            weight,
        }
    }

    pub fn log_density(&self, class: usize, len: f64) -> f64 {
        let (m, s) = (self.mean[class], self.std[class]);
        let z = (len - m) / s;
        -0.5 * z * z - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }

    /// `sum_I P(I) * P(C | I)^w`; exactly 1 when no intentions are registered.
    pub fn intention_mix(&self, class: usize) -> f64 {
        if self.intentions.is_empty() {
            return 1.0;
        }
        self.intention_prior
            .iter()
            .zip(&self.class_given_intention)
            .map(|(pi, row)| pi * (self.weight * row[class].ln()).exp())
            .sum()
    }

    /// Multiplier applied to a classifier probability for a hypothesis of length `len`.
    pub fn factor(&self, class: usize, len: f64) -> f64 {
        (self.weight * self.log_density(class, len)).exp() * self.intention_mix(class)
    }
}

/// Duration hypotheses `mu + k * sigma` for each offset `k`, floored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DurationRule {
    pub sigma_offsets: Vec<f64>,
    pub min_frames: usize,
}

impl Default for DurationRule {
    fn default() -> Self {
        Self {
            sigma_offsets: vec![-1.0, 0.0, 1.0],
            min_frames: 2,
        }
    }
}

impl DurationRule {
    pub fn hypotheses(&self, prior: &DurationPrior) -> Vec<Vec<usize>> {
        prior
            .mean
            .iter()
            .zip(&prior.std)
            .map(|(m, s)| {
                self.sigma_offsets
                    .iter()
                    .map(|k| ((m + k * s).round().max(0.0) as usize).max(self.min_frames))
                    .collect()
            })
            .collect()
    }
}

/// Which blocks feed the classifiers. Excluded blocks are zero-filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub representation: OnsetRepresentation,
    pub use_bow: bool,
}

impl FeatureLayout {
    pub fn early(representation: OnsetRepresentation) -> Self {
        Self {
            representation,
            use_bow: true,
        }
    }

    pub fn context_only() -> Self {
        Self {
            representation: OnsetRepresentation::HistogramPlusMeanMax,
            use_bow: false,
        }
    }

    pub fn input_dim(&self, vocabulary: usize, n_onsets: usize, cascade: &CascadeConfig) -> usize {
        vocabulary + self.representation.block_len(n_onsets, cascade, vocabulary)
    }
}

/// Blocks to zero on top of the layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct InputMask {
    pub zero_bow: bool,
    pub zero_context: bool,
}

impl InputMask {
    pub fn combine(self, other: InputMask) -> InputMask {
        InputMask {
            zero_bow: self.zero_bow || other.zero_bow,
            zero_context: self.zero_context || other.zero_context,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    pub classes: ClassTable,
    pub codebook: Codebook,
    pub templates: Vec<OnsetTemplate>,
    pub cascade: CascadeConfig,
    pub layout: FeatureLayout,
    pub bank: ClassifierBank,
    pub prior: DurationPrior,
    /// Duration hypotheses per main class, frames.
    pub durations: Vec<Vec<usize>>,
    /// NMS window as a fraction of the class mean duration.
    pub nms_fraction: f64,
}

impl DetectorModel {
    pub fn vocabulary(&self) -> usize {
        self.codebook.vocabulary()
    }

    pub fn input_dim(&self) -> usize {
        self.layout.input_dim(self.vocabulary(), self.templates.len(), &self.cascade)
    }

    pub fn check(&self) -> Result<(), DetectorError> {
        let n = self.classes.main.len();
        let bad = |m: &str| Err(DetectorError::Inconsistent(m.to_string()));
        if !self.bank.is_consistent() || self.bank.classes.len() != n {
            return bad("classifier bank does not cover every (class, level) pair");
        }
        if self.bank.input_dim() != self.input_dim() {
            return bad("classifier input dimension disagrees with the feature layout");
        }
        if self.durations.len() != n || self.prior.mean.len() != n || self.prior.std.len() != n {
            return bad("duration prior does not cover every class");
        }
        if self.templates.iter().any(|t| t.mean.len() != self.vocabulary() || t.durations.is_empty()) {
            return bad("onset template incompatible with codebook");
        }
        Ok(())
    }

    pub fn nms_window(&self, class: usize) -> usize {
        round_half_up(self.nms_fraction * self.prior.mean[class])
    }
}

/// Quantized words, integral histogram and onset index of one stream, either
/// built in one pass or grown frame by frame.
#[derive(Debug, Clone)]
pub struct StreamState {
    hist: IntegralHistogram,
    index: SignatureIndex,
    scratch: Vec<f64>,
    responses: Vec<f64>,
}

impl StreamState {
    pub fn empty(codebook: &Codebook, templates: &[OnsetTemplate], cascade: &CascadeConfig) -> Self {
        Self {
            hist: IntegralHistogram::new(codebook.vocabulary()),
            index: SignatureIndex::new(templates.len(), cascade),
            scratch: vec![0.0; codebook.vocabulary()],
            responses: vec![0.0; templates.len()],
        }
    }

    /// Processes a whole stream at once.
    pub fn batch(
        codebook: &Codebook,
        templates: &[OnsetTemplate],
        cascade: &CascadeConfig,
        stream: &FeatureStream,
    ) -> Result<Self, DetectorError> {
        let words = crate::codebook::quantize(stream, codebook)?;
        let hist = IntegralHistogram::from_words(&words, codebook.vocabulary())?;
        Self::from_histogram(hist, templates, cascade)
    }

    /// Builds the state from an already quantized stream.
    pub fn from_histogram(
        hist: IntegralHistogram,
        templates: &[OnsetTemplate],
        cascade: &CascadeConfig,
    ) -> Result<Self, DetectorError> {
        let sigs = signatures_from_histogram(&hist, templates)?;
        let vocabulary = hist.vocabulary();
        Ok(Self {
            index: SignatureIndex::from_signatures(&sigs, cascade),
            hist,
            scratch: vec![0.0; vocabulary],
            responses: vec![0.0; templates.len()],
        })
    }

    pub fn for_model(model: &DetectorModel, stream: &FeatureStream) -> Result<Self, DetectorError> {
        Self::batch(&model.codebook, &model.templates, &model.cascade, stream)
    }

    /// Appends one frame.
    pub fn push(&mut self, codebook: &Codebook, templates: &[OnsetTemplate], frame: &[f64]) -> Result<(), DetectorError> {
        let word = codebook.quantize_frame(frame)?;
        self.hist.push(word)?;
        let t = self.hist.len() - 1;
        for (g, tmpl) in self.responses.iter_mut().zip(templates) {
            *g = response_at(&self.hist, t, tmpl, &mut self.scratch);
        }
        self.index.push(&self.responses);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.hist.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hist.is_empty()
    }

    pub fn histogram(&self) -> &IntegralHistogram {
        &self.hist
    }

    pub fn signatures(&self) -> &SignatureIndex {
        &self.index
    }
}

/// Writes the context block for frame `t` (and hypothesized start `t1`).
pub(crate) fn fill_context(
    state: &StreamState,
    representation: OnsetRepresentation,
    cascade: &CascadeConfig,
    spans: &[(i64, i64)],
    t: usize,
    t1: usize,
    out: &mut [f64],
) {
    match representation {
        OnsetRepresentation::HistogramPlusMeanMax => {
            state.index.fill(t, cascade, spans, true, true, out);
        }
        OnsetRepresentation::HistogramOnly => {
            state.index.fill(t, cascade, spans, true, false, out);
        }
        OnsetRepresentation::MeanMaxOnly => {
            state.index.fill(t, cascade, spans, false, true, out);
        }
        OnsetRepresentation::RawPriorFrames => {
            if t1 == 0 {
                out.fill(0.0);
            } else {
                state.hist.fill_normalized(t1.saturating_sub(RAW_PRIOR_FRAMES), t1 - 1, out);
            }
        }
        OnsetRepresentation::NoOnset => {}
    }
}

/// Builds one classifier input: `BoW[t1, t] || context`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn fill_input(
    state: &StreamState,
    layout: &FeatureLayout,
    mask: InputMask,
    cascade: &CascadeConfig,
    spans: &[(i64, i64)],
    t: usize,
    t1: usize,
    out: &mut [f64],
) {
    let w = state.hist.vocabulary();
    let (bow, ctx) = out.split_at_mut(w);
    if layout.use_bow && !mask.zero_bow {
        state.hist.fill_normalized(t1, t, bow);
    } else {
        bow.fill(0.0);
    }
    if mask.zero_context {
        ctx.fill(0.0);
    } else {
        fill_context(state, layout.representation, cascade, spans, t, t1, ctx);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameScore {
    pub score: f64,
    /// Winning progress level, if any hypothesis was feasible.
    pub level: Option<f64>,
    pub interval: Option<Interval>,
}

impl FrameScore {
    const NONE: FrameScore = FrameScore {
        score: 0.0,
        level: None,
        interval: None,
    };
}

/// Scoring engine over a model with precomputed prior factors.
#[derive(Debug, Clone)]
pub struct Detector<'m> {
    pub model: &'m DetectorModel,
    mask: InputMask,
    /// `factors[c][j]` multiplies probabilities for duration hypothesis `j` of class `c`.
    factors: Vec<Vec<f64>>,
    buf: Vec<f64>,
}

impl<'m> Detector<'m> {
    pub fn new(model: &'m DetectorModel) -> Result<Self, DetectorError> {
        Self::with_mask(model, InputMask::default())
    }

    pub fn with_mask(model: &'m DetectorModel, mask: InputMask) -> Result<Self, DetectorError> {
        model.check()?;
        let factors = model
            .durations
            .iter()
            .enumerate()
            .map(|(c, ls)| ls.iter().map(|&l| model.prior.factor(c, l as f64)).collect())
            .collect();
        Ok(Self {
            model,
            mask,
            factors,
            buf: vec![0.0; model.input_dim()],
        })
    }

    fn scores_into(&mut self, state: &StreamState, t: usize, classes: std::ops::Range<usize>, out: &mut Vec<FrameScore>) {
        let m = self.model;
        let spans = window_spans(t, &m.cascade);
        let per_hypothesis = m.layout.representation == OnsetRepresentation::RawPriorFrames;
        let w = m.vocabulary();
        if !per_hypothesis && !self.mask.zero_context {
            fill_context(state, m.layout.representation, &m.cascade, &spans, t, t, &mut self.buf[w..]);
        } else if self.mask.zero_context {
            self.buf[w..].fill(0.0);
        }
        let bow_on = m.layout.use_bow && !self.mask.zero_bow;
        if !bow_on {
            self.buf[..w].fill(0.0);
        }
        for c in classes {
            let mut best = FrameScore::NONE;
            for (li, &d) in m.bank.progress_levels.iter().enumerate() {
                let clf = m.bank.get(c, li);
                for (j, &len) in m.durations[c].iter().enumerate() {
                    let offset = round_half_up(d * len as f64);
                    if offset > t {
                        continue;
                    }
                    let t1 = t - offset;
                    if bow_on {
                        state.hist.fill_normalized(t1, t, &mut self.buf[..w]);
                    }
                    if per_hypothesis && !self.mask.zero_context {
                        fill_context(state, m.layout.representation, &m.cascade, &spans, t, t1, &mut self.buf[w..]);
                    }
                    let p = clf.prob_from_score(clf.score_unchecked(&self.buf));
                    let s = p * self.factors[c][j];
                    if s > best.score || best.interval.is_none() {
                        best = FrameScore {
                            score: s,
                            level: Some(d),
                            interval: Some(Interval { t1, t2: t1 + len }),
                        };
                    }
                }
            }
            out.push(best);
        }
    }

    /// Scores of every main class at frame `t`.
    pub fn score_all(&mut self, state: &StreamState, t: usize) -> Vec<FrameScore> {
        let mut out = Vec::with_capacity(self.model.classes.main.len());
        self.scores_into(state, t, 0..self.model.classes.main.len(), &mut out);
        out
    }

    pub fn score_frame(&mut self, state: &StreamState, t: usize, class: usize) -> FrameScore {
        let mut out = Vec::with_capacity(1);
        self.scores_into(state, t, class..class + 1, &mut out);
        out[0]
    }

    /// Per-class score traces over every frame of a prepared stream.
    pub fn traces(&mut self, state: &StreamState) -> Vec<Vec<FrameScore>> {
        let n = self.model.classes.main.len();
        let mut traces = vec![Vec::with_capacity(state.len()); n];
        let mut frame = Vec::with_capacity(n);
        for t in 0..state.len() {
            frame.clear();
            self.scores_into(state, t, 0..n, &mut frame);
            for (tr, s) in traces.iter_mut().zip(&frame) {
                tr.push(*s);
            }
        }
        traces
    }
}

/// Score of `class` at frame `t`: the early-detection score of the model.
pub fn score_frame(model: &DetectorModel, state: &StreamState, t: usize, class: usize) -> Result<FrameScore, DetectorError> {
    Ok(Detector::new(model)?.score_frame(state, t, class))
}

/// After-the-fact score of a complete interval: progress fixed at 1.0 and the
/// context block zeroed.
pub fn after_the_fact_score(
    model: &DetectorModel,
    state: &StreamState,
    iv: &Interval,
    class: usize,
) -> Result<f64, DetectorError> {
    model.check()?;
    if iv.t1 > iv.t2 || iv.t2 >= state.len() {
        return Err(DetectorError::OutOfRange { iv: *iv, len: state.len() });
    }
    let level = model.bank.level_index(1.0).ok_or(DetectorError::MissingLevel(1.0))?;
    let mut buf = vec![0.0; model.input_dim()];
    let w = model.vocabulary();
    if model.layout.use_bow {
        state.hist.fill_normalized(iv.t1, iv.t2, &mut buf[..w]);
    }
    let clf = model.bank.get(class, level);
    let p = clf.prob_from_score(clf.score_unchecked(&buf));
    Ok(p * model.prior.factor(class, (iv.t2 - iv.t1) as f64))
}

/// Early score computed from the onset context alone (word block zeroed).
pub fn context_only_score(model: &DetectorModel, state: &StreamState, t: usize, class: usize) -> Result<f64, DetectorError> {
    let mask = InputMask {
        zero_bow: true,
        zero_context: false,
    };
    Ok(Detector::with_mask(model, mask)?.score_frame(state, t, class).score)
}

/// A peak of a class score trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub stream: String,
    pub class: String,
    pub t: usize,
    pub t1: usize,
    pub t2: usize,
    pub d: f64,
    pub score: f64,
}

/// Local maxima of `scores` surviving greedy non-maximum suppression: peaks
/// are taken by descending score and suppress any other peak closer than `window`
/// frames. Zero scores never produce peaks. Returned in acceptance order.
pub fn pick_peaks(scores: &[f64], window: usize) -> Vec<usize> {
    let n = scores.len();
    let mut cands: Vec<usize> = (0..n)
        .filter(|&t| {
            scores[t] > 0.0 && (t == 0 || scores[t] > scores[t - 1]) && (t + 1 == n || scores[t] >= scores[t + 1])
        })
        .collect();
    cands.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for t in cands {
        if kept.iter().all(|&k| k.abs_diff(t) >= window) {
            kept.push(t);
        }
    }
    kept
}

/// Turns per-class traces into detections sorted by descending score.
pub fn detections_from_traces(
    stream: &str,
    classes: &[String],
    traces: &[Vec<FrameScore>],
    windows: &[usize],
) -> Vec<Detection> {
    let mut out = Vec::new();
    for ((class, trace), &window) in classes.iter().zip(traces).zip(windows) {
        let scores: Vec<f64> = trace.iter().map(|f| f.score).collect();
        for t in pick_peaks(&scores, window) {
            let f = trace[t];
            let iv = f.interval.unwrap_or(Interval { t1: t, t2: t });
            out.push(Detection {
                stream: stream.to_string(),
                class: class.clone(),
                t,
                t1: iv.t1,
                t2: iv.t2,
                d: f.level.unwrap_or(0.0),
                score: f.score,
            });
        }
    }
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.t.cmp(&b.t)).then(a.class.cmp(&b.class)));
    out
}

/// Result of running a detector over one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamDetections {
    pub traces: Vec<Vec<FrameScore>>,
    pub detections: Vec<Detection>,
}

impl StreamDetections {
    /// Score traces as CSV: one row per frame, one column per class.
    pub fn traces_csv(&self, classes: &[String]) -> String {
        let mut out = String::from("t");
        for c in classes {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        let n = self.traces.first().map_or(0, Vec::len);
        for t in 0..n {
            out.push_str(&t.to_string());
            for tr in &self.traces {
                out.push(',');
                out.push_str(&tr[t].score.to_string());
            }
            out.push('\n');
        }
        out
    }
}

pub fn detect_prepared(model: &DetectorModel, stream_id: &str, state: &StreamState, mask: InputMask) -> Result<StreamDetections, DetectorError> {
    let traces = Detector::with_mask(model, mask)?.traces(state);
    let windows: Vec<usize> = (0..model.classes.main.len()).map(|c| model.nms_window(c)).collect();
    let detections = detections_from_traces(stream_id, &model.classes.main, &traces, &windows);
    Ok(StreamDetections { traces, detections })
}

/// Runs the detector over a whole stream and picks peaks per class.
pub fn detect_stream(model: &DetectorModel, stream: &FeatureStream) -> Result<StreamDetections, DetectorError> {
    let state = StreamState::for_model(model, stream)?;
    detect_prepared(model, &stream.id, &state, InputMask::default())
}

/// Frame-by-frame detector; scores are identical to batch processing.
pub struct OnlineDetector<'m> {
    detector: Detector<'m>,
    state: StreamState,
    traces: Vec<Vec<FrameScore>>,
}

impl<'m> OnlineDetector<'m> {
    pub fn new(model: &'m DetectorModel) -> Result<Self, DetectorError> {
        Ok(Self {
            detector: Detector::new(model)?,
            state: StreamState::empty(&model.codebook, &model.templates, &model.cascade),
            traces: vec![Vec::new(); model.classes.main.len()],
        })
    }

    /// Consumes one frame and returns the per-class scores at that frame.
    pub fn push(&mut self, frame: &[f64]) -> Result<Vec<FrameScore>, DetectorError> {
        let m = self.detector.model;
        self.state.push(&m.codebook, &m.templates, frame)?;
        let t = self.state.len() - 1;
        let scores = self.detector.score_all(&self.state, t);
        for (tr, s) in self.traces.iter_mut().zip(&scores) {
            tr.push(*s);
        }
        Ok(scores)
    }

    pub fn traces(&self) -> &[Vec<FrameScore>] {
        &self.traces
    }

    /// Peak detections over everything seen so far.
    pub fn finish(self, stream_id: &str) -> StreamDetections {
        let m = self.detector.model;
        let windows: Vec<usize> = (0..m.classes.main.len()).map(|c| m.nms_window(c)).collect();
        let detections = detections_from_traces(stream_id, &m.classes.main, &self.traces, &windows);
        StreamDetections {
            traces: self.traces,
            detections,
        }
    }
}
