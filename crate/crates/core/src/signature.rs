//! Cascade histograms of onset-response gradients.
//!
//! For a response series `G` and a window `[t - b + 1, t]`, each node of a
//! binary temporal segmentation of depth `l` counts the frames whose gradient
//! `G(t') - G(t' - s)` is positive (`h+`) or not (`h-`). Nodes are emitted
//! post-order (left subtree, right subtree, then the node itself), one block
//! per step size `s`. `G` is taken as zero before frame 0.
//!
//! The final per-frame vector concatenates, for every onset class, the
//! node-length-normalized cascade bins, then the window means and window maxima
//! of every series.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::onset::OnsetSignatureSet;
use crate::timeline::Interval;

/// Frames preceding the hypothesized start used by the raw-prior-frames variant.
pub const RAW_PRIOR_FRAMES: usize = 50;

#[derive(Debug, Error, PartialEq)]
pub enum SignatureError {
    #[error("cascade depth must be at least 1")]
    ZeroDepth,
    #[error("window {window} too short for depth {depth} (needs at least {needed})")]
    WindowTooShort { window: usize, depth: usize, needed: usize },
    #[error("gradient steps must be nonempty and at least 1")]
    BadSteps,
    #[error("interval {iv} outside series of {len} frames")]
    OutOfRange { iv: Interval, len: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CascadeConfig {
    /// Window length `b` in frames.
    pub window: usize,
    /// Segmentation depth `l`.
    pub depth: usize,
    /// Gradient step sizes `s`, in output order.
    pub steps: Vec<usize>,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        Self {
            window: 100,
            depth: 3,
            steps: vec![1, 5, 10],
        }
    }
}

impl CascadeConfig {
    pub fn validate(&self) -> Result<(), SignatureError> {
        if self.depth == 0 {
            return Err(SignatureError::ZeroDepth);
        }
        let needed = 1usize << (self.depth - 1);
        if self.window < needed {
            return Err(SignatureError::WindowTooShort {
                window: self.window,
                depth: self.depth,
                needed,
            });
        }
        if self.steps.is_empty() || self.steps.contains(&0) {
            return Err(SignatureError::BadSteps);
        }
        Ok(())
    }

    pub fn n_nodes(&self) -> usize {
        (1 << self.depth) - 1
    }

    /// Cascade length for one series: `|s| * (2^l - 1) * 2`.
    pub fn histogram_len(&self) -> usize {
        self.steps.len() * self.n_nodes() * 2
    }

    /// Full signature vector length for `k` onset series.
    pub fn vector_len(&self, k: usize) -> usize {
        k * self.histogram_len() + 2 * k
    }

    pub fn max_step(&self) -> usize {
        self.steps.iter().copied().max().unwrap_or(0)
    }
}

/// `G(t)` with zero extension before frame 0.
#[inline]
fn at(g: &[f64], t: i64) -> f64 {
    if t < 0 {
        0.0
    } else {
        g[t as usize]
    }
}

#[inline]
fn rises(g: &[f64], t: i64, s: usize) -> bool {
    t >= 0 && g[t as usize] - at(g, t - s as i64) > 0.0
}

fn count_span(g: &[f64], t1: i64, t2: i64, s: usize) -> (u32, u32) {
    let plus = (t1..=t2).filter(|&t| rises(g, t, s)).count() as u32;
    (plus, (t2 - t1 + 1) as u32 - plus)
}

/// Positive and non-positive gradient counts of `g` over `iv` at step `s`.
pub fn gradient_counts(g: &[f64], iv: &Interval, s: usize) -> Result<(u32, u32), SignatureError> {
    if iv.t1 > iv.t2 || iv.t2 >= g.len() {
        return Err(SignatureError::OutOfRange { iv: *iv, len: g.len() });
    }
    if s == 0 {
        return Err(SignatureError::BadSteps);
    }
    Ok(count_span(g, iv.t1 as i64, iv.t2 as i64, s))
}

/// Post-order spans of the cascade rooted at `[t1, t2]`. The left child takes
/// `[t1, mid]` and the right `[mid + 1, t2]` with `mid = floor((t1 + t2) / 2)`.
pub(crate) fn cascade_spans(t1: i64, t2: i64, depth: usize, out: &mut Vec<(i64, i64)>) {
    if depth > 1 {
        let mid = (t1 + t2).div_euclid(2);
        cascade_spans(t1, mid, depth - 1, out);
        cascade_spans(mid + 1, t2, depth - 1, out);
    }
    out.push((t1, t2));
}

pub(crate) fn window_spans(t: usize, cfg: &CascadeConfig) -> Vec<(i64, i64)> {
    let mut spans = Vec::with_capacity(cfg.n_nodes());
    cascade_spans(t as i64 - cfg.window as i64 + 1, t as i64, cfg.depth, &mut spans);
    spans
}

/// Raw cascade counts `[h+, h-]` per node, per step, for the window ending at `t`.
pub fn cascade_histogram(g: &[f64], t: usize, cfg: &CascadeConfig) -> Vec<u32> {
    let spans = window_spans(t, cfg);
    let mut out = Vec::with_capacity(cfg.histogram_len());
    for &s in &cfg.steps {
        for &(a, b) in &spans {
            let (p, m) = count_span(g, a, b, s);
            out.push(p);
            out.push(m);
        }
    }
    out
}

fn window_mean_max(g: &[f64], t: usize, window: usize) -> (f64, f64) {
    let start = (t + 1).saturating_sub(window);
    let mut sum = 0.0;
    let mut max = 0.0f64;
    for &v in &g[start..=t] {
        sum += v;
        max = max.max(v);
    }
    (sum / window as f64, max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignatureVector {
    pub values: Vec<f64>,
}

/// The per-frame onset signature vector.
pub fn signature_vector(sigs: &OnsetSignatureSet, t: usize, cfg: &CascadeConfig) -> SignatureVector {
    let spans = window_spans(t, cfg);
    let mut values = Vec::with_capacity(cfg.vector_len(sigs.n_onsets()));
    for g in &sigs.series {
        for &s in &cfg.steps {
            for &(a, b) in &spans {
                let len = (b - a + 1) as f64;
                let (p, m) = count_span(g, a, b, s);
                values.push(p as f64 / len);
                values.push(m as f64 / len);
            }
        }
    }
    let stats: Vec<(f64, f64)> = sigs.series.iter().map(|g| window_mean_max(g, t, cfg.window)).collect();
    values.extend(stats.iter().map(|s| s.0));
    values.extend(stats.iter().map(|s| s.1));
    SignatureVector { values }
}

/// How pre-activity context enters the classifier input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum OnsetRepresentation {
    /// Cascade histograms plus window means and maxima.
    HistogramPlusMeanMax,
    HistogramOnly,
    MeanMaxOnly,
    /// Normalized word histogram of the frames just before the hypothesized start.
    RawPriorFrames,
    NoOnset,
}

impl OnsetRepresentation {
    pub const ALL: [OnsetRepresentation; 5] = [
        OnsetRepresentation::RawPriorFrames,
        OnsetRepresentation::MeanMaxOnly,
        OnsetRepresentation::HistogramOnly,
        OnsetRepresentation::HistogramPlusMeanMax,
        OnsetRepresentation::NoOnset,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            OnsetRepresentation::HistogramPlusMeanMax => "HISTOGRAM_PLUS_MEAN_MAX",
            OnsetRepresentation::HistogramOnly => "HISTOGRAM_ONLY",
            OnsetRepresentation::MeanMaxOnly => "MEAN_MAX_ONLY",
            OnsetRepresentation::RawPriorFrames => "RAW_PRIOR_FRAMES",
            OnsetRepresentation::NoOnset => "NO_ONSET",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.name().eq_ignore_ascii_case(s))
    }

    /// Length of the context block for `k` onsets and vocabulary `w`.
    pub fn block_len(&self, k: usize, cfg: &CascadeConfig, w: usize) -> usize {
        match self {
            OnsetRepresentation::HistogramPlusMeanMax => cfg.vector_len(k),
            OnsetRepresentation::HistogramOnly => k * cfg.histogram_len(),
            OnsetRepresentation::MeanMaxOnly => 2 * k,
            OnsetRepresentation::RawPriorFrames => w,
            OnsetRepresentation::NoOnset => 0,
        }
    }

    /// Whether the block is a function of the onset response series.
    pub fn uses_signatures(&self) -> bool {
        matches!(
            self,
            OnsetRepresentation::HistogramPlusMeanMax
                | OnsetRepresentation::HistogramOnly
                | OnsetRepresentation::MeanMaxOnly
        )
    }
}

/// Response series with per-step prefix counts of rising frames, so every
/// cascade node costs O(1). Grows one frame at a time.
#[derive(Debug, Clone)]
pub struct SignatureIndex {
    steps: Vec<usize>,
    series: Vec<Vec<f64>>,
    /// `rising[k][si][t]` = rising frames of series `k` at step `steps[si]` in `0..t`.
    rising: Vec<Vec<Vec<u32>>>,
}

impl SignatureIndex {
    pub fn new(n_onsets: usize, cfg: &CascadeConfig) -> Self {
        Self {
            steps: cfg.steps.clone(),
            series: vec![Vec::new(); n_onsets],
            rising: vec![vec![vec![0]; cfg.steps.len()]; n_onsets],
        }
    }

    pub fn from_signatures(sigs: &OnsetSignatureSet, cfg: &CascadeConfig) -> Self {
        let mut idx = Self::new(sigs.n_onsets(), cfg);
        let mut frame = vec![0.0; sigs.n_onsets()];
        for t in 0..sigs.len() {
            for (f, s) in frame.iter_mut().zip(&sigs.series) {
                *f = s[t];
            }
            idx.push(&frame);
        }
        idx
    }

    /// Appends one frame: one response per onset series.
    pub fn push(&mut self, responses: &[f64]) {
        for ((g, rising), &v) in self.series.iter_mut().zip(&mut self.rising).zip(responses) {
            g.push(v);
            let t = g.len() as i64 - 1;
            for (r, &s) in rising.iter_mut().zip(&self.steps) {
                let last = *r.last().unwrap();
                r.push(last + rises(g, t, s) as u32);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.series.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_onsets(&self) -> usize {
        self.series.len()
    }

    pub fn series(&self) -> &[Vec<f64>] {
        &self.series
    }

    #[inline]
    fn rising_in(prefix: &[u32], a: i64, b: i64) -> u32 {
        if b < 0 {
            return 0;
        }
        prefix[b as usize + 1] - prefix[a.max(0) as usize]
    }

    /// Writes the requested parts of the signature vector at frame `t` into `out`
    /// and returns the number of values written. `spans` must come from
    /// [`window_spans`] for the same `t`.
    pub(crate) fn fill(
        &self,
        t: usize,
        cfg: &CascadeConfig,
        spans: &[(i64, i64)],
        histogram: bool,
        mean_max: bool,
        out: &mut [f64],
    ) -> usize {
        let mut i = 0;
        if histogram {
            for rising in &self.rising {
                for prefix in rising {
                    for &(a, b) in spans {
                        let len = (b - a + 1) as u32;
                        let p = Self::rising_in(prefix, a, b);
                        out[i] = p as f64 / len as f64;
                        out[i + 1] = (len - p) as f64 / len as f64;
                        i += 2;
                    }
                }
            }
        }
        if mean_max {
            let k = self.series.len();
            for (j, g) in self.series.iter().enumerate() {
                let (mean, max) = window_mean_max(g, t, cfg.window);
                out[i + j] = mean;
                out[i + k + j] = max;
            }
            i += 2 * k;
        }
        i
    }

    /// The full signature vector at `t`.
    pub fn vector(&self, t: usize, cfg: &CascadeConfig) -> SignatureVector {
        let spans = window_spans(t, cfg);
        let mut values = vec![0.0; cfg.vector_len(self.n_onsets())];
        self.fill(t, cfg, &spans, true, true, &mut values);
        SignatureVector { values }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg(window: usize, depth: usize, steps: Vec<usize>) -> CascadeConfig {
        CascadeConfig { window, depth, steps }
    }

    #[test]
    fn config_validation() {
        assert!(CascadeConfig::default().validate().is_ok());
        assert_eq!(cfg(3, 3, vec![1]).validate(), Err(SignatureError::WindowTooShort { window: 3, depth: 3, needed: 4 }));
        assert_eq!(cfg(10, 0, vec![1]).validate(), Err(SignatureError::ZeroDepth));
        assert_eq!(cfg(10, 2, vec![]).validate(), Err(SignatureError::BadSteps));
    }

    #[test]
    fn constant_and_increasing_series() {
        let flat = vec![0.4; 30];
        assert_eq!(gradient_counts(&flat, &Interval { t1: 5, t2: 14 }, 1).unwrap(), (0, 10));
        let up: Vec<f64> = (0..30).map(|t| t as f64 * 0.01).collect();
        assert_eq!(gradient_counts(&up, &Interval { t1: 1, t2: 10 }, 1).unwrap(), (10, 0));
        assert!(gradient_counts(&up, &Interval { t1: 25, t2: 30 }, 1).is_err());
    }

    #[test]
    fn sawtooth_matches_direct_loop() {
        let g: Vec<f64> = (0..60).map(|t| (t % 7) as f64 / 7.0).collect();
        for s in [1, 3, 7] {
            for t1 in 0..50 {
                let t2 = t1 + 9;
                let mut plus = 0;
                for t in t1..=t2 {
                    let prev = if t >= s { g[t - s] } else { 0.0 };
                    if g[t] - prev > 0.0 {
                        plus += 1;
                    }
                }
                assert_eq!(gradient_counts(&g, &Interval { t1, t2 }, s).unwrap(), (plus, 10 - plus));
            }
        }
    }

    #[test]
    fn depth_three_has_seven_nodes() {
        let c = cfg(100, 3, vec![1]);
        let flat = vec![0.2; 150];
        let h = cascade_histogram(&flat, 120, &c);
        assert_eq!(h.len(), 14);
        let spans = window_spans(120, &c);
        for (node, &(a, b)) in spans.iter().enumerate() {
            assert_eq!(h[2 * node], 0);
            assert_eq!(h[2 * node + 1] as i64, b - a + 1);
        }
        // Post-order: leaves [21,45] [46,70], their parent, then the right subtree, then the root.
        assert_eq!(spans, vec![(21, 45), (46, 70), (21, 70), (71, 95), (96, 120), (71, 120), (21, 120)]);
    }

    #[test]
    fn example_layout_length() {
        let c = CascadeConfig::default();
        assert_eq!(c.vector_len(4), 176);
        let sigs = OnsetSignatureSet { series: vec![vec![0.0; 10]; 4] };
        let v = signature_vector(&sigs, 9, &c);
        assert_eq!(v.values.len(), 176);
        let hist = &v.values[..168];
        assert!(hist.chunks(2).all(|p| p == [0.0, 1.0]));
        assert!(v.values[168..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn planted_ramp_only_affects_its_channel() {
        let c = CascadeConfig::default();
        let mut series = vec![vec![0.0; 200]; 3];
        for t in 150..200 {
            series[1][t] = (t - 149) as f64 / 50.0;
        }
        let sigs = OnsetSignatureSet { series };
        let v = signature_vector(&sigs, 199, &c).values;
        let per = c.histogram_len();
        let ramp = &v[per..2 * per];
        assert!(ramp.chunks(2).any(|p| p[0] > 0.0));
        for k in [0, 2] {
            assert!(v[k * per..(k + 1) * per].chunks(2).all(|p| p == [0.0, 1.0]));
        }
        // Brute force: in the root of step 1, every ramp frame rises.
        let root_s1 = 2 * (c.n_nodes() - 1);
        assert_eq!(ramp[root_s1], 50.0 / 100.0);
    }

    #[test]
    fn index_matches_direct_vector_early_in_stream() {
        let c = cfg(16, 3, vec![1, 2]);
        let sigs = OnsetSignatureSet {
            series: vec![(0..40).map(|t| ((t * 13) % 5) as f64 / 5.0).collect(), vec![0.3; 40]],
        };
        let idx = SignatureIndex::from_signatures(&sigs, &c);
        for t in 0..40 {
            assert_eq!(idx.vector(t, &c), signature_vector(&sigs, t, &c));
        }
    }

    fn arb_series() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(prop_oneof![Just(0.0), Just(0.5), 0.0f64..1.0], 1..160)
    }

    proptest! {
        #[test]
        fn partition_and_conservation(g in arb_series(), depth in 1usize..5, extra in 0usize..40, tsel in any::<u16>(), s in 1usize..12) {
            let c = cfg((1 << (depth - 1)) + extra, depth, vec![s]);
            let t = tsel as usize % g.len();
            let h = cascade_histogram(&g, t, &c);
            let spans = window_spans(t, &c);
            for (n, &(a, b)) in spans.iter().enumerate() {
                prop_assert_eq!((h[2 * n] + h[2 * n + 1]) as i64, b - a + 1);
            }
            // Reconstruct the post-order tree and check parent = left + right.
            fn check(h: &[u32], depth: usize, next: &mut usize) -> (u32, u32) {
                if depth == 1 {
                    let n = *next; *next += 1;
                    return (h[2 * n], h[2 * n + 1]);
                }
                let l = check(h, depth - 1, next);
                let r = check(h, depth - 1, next);
                let n = *next; *next += 1;
                assert_eq!((h[2 * n], h[2 * n + 1]), (l.0 + r.0, l.1 + r.1));
                (h[2 * n], h[2 * n + 1])
            }
            let mut next = 0;
            check(&h, depth, &mut next);
        }

        #[test]
        fn locality(g in arb_series(), noise in arb_series(), tsel in any::<u16>()) {
            let c = cfg(20, 3, vec![1, 3]);
            let t = tsel as usize % g.len();
            let first = (t as i64 - 20 + 1 - 3).max(0) as usize;
            let mut altered = g.clone();
            for (i, v) in altered.iter_mut().enumerate().take(first) {
                *v = noise[i % noise.len()];
            }
            let a = signature_vector(&OnsetSignatureSet { series: vec![g] }, t, &c);
            let b = signature_vector(&OnsetSignatureSet { series: vec![altered] }, t, &c);
            prop_assert_eq!(a, b);
        }
    }
}
