//! Streams, intervals, labeled activity instances and dataset splits.
//!
//! Frame indices are 0-based and intervals are inclusive on both ends, so an
//! interval `[t1, t2]` covers `t2 - t1 + 1` frames.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TimelineError {
    #[error("stream {id}: frame {frame} has dimension {got}, expected {expected}")]
    FrameDimension {
        id: String,
        frame: usize,
        got: usize,
        expected: usize,
    },
    #[error("stream {0}: feature dimension must be at least 1")]
    EmptyFeatures(String),
    #[error("interval start {t1} is after end {t2}")]
    InvertedInterval { t1: usize, t2: usize },
    #[error("observation ratio {0} is outside (0, 1]")]
    Ratio(f64),
}

/// A dense multivariate feature stream sampled at a fixed frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStream {
    pub id: String,
    pub fps: f64,
    /// Session-level intention label, when the whole stream shares one.
    pub intention: Option<String>,
    n_feat: usize,
    data: Vec<f64>,
}

impl FeatureStream {
    pub fn new(id: impl Into<String>, fps: f64, frames: Vec<Vec<f64>>) -> Result<Self, TimelineError> {
        let id = id.into();
        let n_feat = frames.first().map(Vec::len).unwrap_or(1);
        let mut data = Vec::with_capacity(frames.len() * n_feat);
        for (frame, x) in frames.into_iter().enumerate() {
            if x.len() != n_feat {
                return Err(TimelineError::FrameDimension {
                    id,
                    frame,
                    got: x.len(),
                    expected: n_feat,
                });
            }
            data.extend(x);
        }
        Self::from_flat(id, fps, n_feat, data)
    }

    /// Builds a stream from row-major frame data.
    pub fn from_flat(
        id: impl Into<String>,
        fps: f64,
        n_feat: usize,
        data: Vec<f64>,
    ) -> Result<Self, TimelineError> {
        let id = id.into();
        if n_feat == 0 {
            return Err(TimelineError::EmptyFeatures(id));
        }
        if !data.len().is_multiple_of(n_feat) {
            return Err(TimelineError::FrameDimension {
                frame: data.len() / n_feat,
                got: data.len() % n_feat,
                expected: n_feat,
                id,
            });
        }
        Ok(Self {
            id,
            fps,
            intention: None,
            n_feat,
            data,
        })
    }

    pub fn with_intention(mut self, intention: Option<String>) -> Self {
        self.intention = intention;
        self
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.n_feat
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn n_feat(&self) -> usize {
        self.n_feat
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.n_feat..(t + 1) * self.n_feat]
    }

    pub fn frames(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.n_feat)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// The interval covering every frame, or `None` for an empty stream.
    pub fn span(&self) -> Option<Interval> {
        (!self.is_empty()).then(|| Interval {
            t1: 0,
            t2: self.len() - 1,
        })
    }
}

/// Inclusive frame interval `[t1, t2]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Interval {
    pub t1: usize,
    pub t2: usize,
}

impl Interval {
    pub fn new(t1: usize, t2: usize) -> Result<Self, TimelineError> {
        if t1 > t2 {
            return Err(TimelineError::InvertedInterval { t1, t2 });
        }
        Ok(Self { t1, t2 })
    }

    /// Number of frames covered.
    pub fn len(&self) -> usize {
        self.t2 - self.t1 + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, t: usize) -> bool {
        self.t1 <= t && t <= self.t2
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.t1 <= other.t1 && other.t2 <= self.t2
    }

    pub fn intersection(&self, other: &Interval) -> Option<Interval> {
        let t1 = self.t1.max(other.t1);
        let t2 = self.t2.min(other.t2);
        (t1 <= t2).then_some(Interval { t1, t2 })
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.t1, self.t2)
    }
}

/// Intersection-over-union on inclusive frame counts.
pub fn interval_overlap(a: &Interval, b: &Interval) -> f64 {
    match a.intersection(b) {
        None => 0.0,
        Some(inter) => {
            let inter = inter.len();
            let union = a.len() + b.len() - inter;
            inter as f64 / union as f64
        }
    }
}

/// Round-half-up of a nonnegative real. A tiny slack absorbs products such as
/// `0.15 * 10` landing just below the half.
pub(crate) fn round_half_up(x: f64) -> usize {
    (x + 0.5 + 1e-9).floor().max(0.0) as usize
}

/// The part of `iv` observed when only `ratio` of its progress has elapsed:
/// `[t1, t1 + round(ratio * (t2 - t1))]`.
pub fn observed_prefix(iv: &Interval, ratio: f64) -> Result<Interval, TimelineError> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(TimelineError::Ratio(ratio));
    }
    let offset = round_half_up(ratio * (iv.t2 - iv.t1) as f64).min(iv.t2 - iv.t1);
    Ok(Interval {
        t1: iv.t1,
        t2: iv.t1 + offset,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivityKind {
    Onset,
    Main,
}

impl fmt::Display for ActivityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ActivityKind::Onset => "onset",
            ActivityKind::Main => "main",
        })
    }
}

/// One labeled occurrence of an activity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityInstance {
    pub class: String,
    pub kind: ActivityKind,
    pub interval: Interval,
    pub intention: Option<String>,
}

/// Registered onset and main activity classes. Class indices used throughout
/// the crate are positions in these lists.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassTable {
    pub onset: Vec<String>,
    pub main: Vec<String>,
}

impl ClassTable {
    pub fn kind_of(&self, class: &str) -> Option<ActivityKind> {
        if self.onset.iter().any(|c| c == class) {
            Some(ActivityKind::Onset)
        } else if self.main.iter().any(|c| c == class) {
            Some(ActivityKind::Main)
        } else {
            None
        }
    }

    pub fn onset_index(&self, class: &str) -> Option<usize> {
        self.onset.iter().position(|c| c == class)
    }

    pub fn main_index(&self, class: &str) -> Option<usize> {
        self.main.iter().position(|c| c == class)
    }
}

/// A named group of streams; cross-validation holds out one set at a time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSet {
    pub name: String,
    pub streams: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub classes: ClassTable,
    pub intentions: Vec<String>,
    pub streams: Vec<FeatureStream>,
    /// Labels keyed by stream id.
    pub labels: BTreeMap<String, Vec<ActivityInstance>>,
    pub sets: Vec<StreamSet>,
}

/// Train/test stream indices for one held-out set.
#[derive(Debug, Clone, PartialEq)]
pub struct Fold {
    pub held_out: String,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Dataset {
    pub fn stream_index(&self, id: &str) -> Option<usize> {
        self.streams.iter().position(|s| s.id == id)
    }

    pub fn labels_for(&self, id: &str) -> &[ActivityInstance] {
        self.labels.get(id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Intention for a label, falling back to its stream's session intention.
    pub fn intention_of<'a>(&'a self, stream: &'a FeatureStream, inst: &'a ActivityInstance) -> Option<&'a str> {
        inst.intention.as_deref().or(stream.intention.as_deref())
    }

    /// Instances of `class` across the given streams as `(stream index, instance)`.
    pub fn instances_of<'a>(
        &'a self,
        class: &'a str,
        streams: &'a [usize],
    ) -> impl Iterator<Item = (usize, &'a ActivityInstance)> + 'a {
        streams.iter().flat_map(move |&si| {
            self.labels_for(&self.streams[si].id)
                .iter()
                .filter(move |inst| inst.class == class)
                .map(move |inst| (si, inst))
        })
    }

    pub fn n_feat(&self) -> Option<usize> {
        self.streams.first().map(FeatureStream::n_feat)
    }

    /// Leave-one-set-out folds in set order. Streams that belong to no set are
    /// always in the training split.
    pub fn leave_one_set_out(&self) -> Vec<Fold> {
        self.sets
            .iter()
            .map(|held| {
                let held_ids: BTreeSet<&str> = held.streams.iter().map(String::as_str).collect();
                let (test, train): (Vec<usize>, Vec<usize>) =
                    (0..self.streams.len()).partition(|&i| held_ids.contains(self.streams[i].id.as_str()));
                Fold {
                    held_out: held.name.clone(),
                    train,
                    test,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rule {
    DuplicateStreamId,
    EmptyStream,
    MixedFeatureDimension { expected: usize, got: usize },
    DanglingStream,
    UnknownClass(String),
    KindMismatch { registered: ActivityKind },
    InvertedInterval,
    OutOfRange { len: usize },
    UnknownIntention(String),
    SetUnknownStream,
    StreamSetCount(usize),
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rule::DuplicateStreamId => write!(f, "duplicate stream id"),
            Rule::EmptyStream => write!(f, "stream has no frames"),
            Rule::MixedFeatureDimension { expected, got } => {
                write!(f, "feature dimension {got} differs from dataset dimension {expected}")
            }
            Rule::DanglingStream => write!(f, "label references unknown stream"),
            Rule::UnknownClass(c) => write!(f, "unregistered class {c:?}"),
            Rule::KindMismatch { registered } => write!(f, "kind disagrees with class table ({registered})"),
            Rule::InvertedInterval => write!(f, "t1 > t2"),
            Rule::OutOfRange { len } => write!(f, "interval exceeds stream length {len}"),
            Rule::UnknownIntention(i) => write!(f, "unregistered intention {i:?}"),
            Rule::SetUnknownStream => write!(f, "set references unknown stream"),
            Rule::StreamSetCount(n) => write!(f, "stream belongs to {n} sets, expected exactly 1"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub stream: String,
    pub label: Option<usize>,
    pub rule: Rule,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.label {
            Some(i) => write!(f, "stream {}: label {}: {}", self.stream, i, self.rule),
            None => write!(f, "stream {}: {}", self.stream, self.rule),
        }
    }
}

/// Checks every dataset invariant; an empty result means the dataset is sound.
pub fn validate_dataset(ds: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |stream: &str, label: Option<usize>, rule: Rule| {
        out.push(Violation {
            stream: stream.to_string(),
            label,
            rule,
        })
    };

    let mut seen = BTreeSet::new();
    let dim = ds.n_feat();
    for s in &ds.streams {
        if !seen.insert(s.id.as_str()) {
            push(&s.id, None, Rule::DuplicateStreamId);
        }
        if s.is_empty() {
            push(&s.id, None, Rule::EmptyStream);
        }
        if let Some(expected) = dim {
            if s.n_feat() != expected {
                push(
                    &s.id,
                    None,
                    Rule::MixedFeatureDimension {
                        expected,
                        got: s.n_feat(),
                    },
                );
            }
        }
        if let Some(i) = &s.intention {
            if !ds.intentions.contains(i) {
                push(&s.id, None, Rule::UnknownIntention(i.clone()));
            }
        }
    }

    for (stream_id, labels) in &ds.labels {
        let stream = ds.streams.iter().find(|s| &s.id == stream_id);
        for (li, inst) in labels.iter().enumerate() {
            let Some(stream) = stream else {
                push(stream_id, Some(li), Rule::DanglingStream);
                continue;
            };
            match ds.classes.kind_of(&inst.class) {
                None => push(stream_id, Some(li), Rule::UnknownClass(inst.class.clone())),
                Some(kind) if kind != inst.kind => {
                    push(stream_id, Some(li), Rule::KindMismatch { registered: kind })
                }
                _ => {}
            }
            if inst.interval.t1 > inst.interval.t2 {
                push(stream_id, Some(li), Rule::InvertedInterval);
            }
            if inst.interval.t2 >= stream.len() {
                push(stream_id, Some(li), Rule::OutOfRange { len: stream.len() });
            }
            if let Some(i) = &inst.intention {
                if !ds.intentions.contains(i) {
                    push(stream_id, Some(li), Rule::UnknownIntention(i.clone()));
                }
            }
        }
    }

    if !ds.sets.is_empty() {
        let mut membership: BTreeMap<&str, usize> = ds.streams.iter().map(|s| (s.id.as_str(), 0)).collect();
        for set in &ds.sets {
            for id in &set.streams {
                match membership.get_mut(id.as_str()) {
                    Some(n) => *n += 1,
                    None => push(id, None, Rule::SetUnknownStream),
                }
            }
        }
        for (id, n) in membership {
            if n != 1 {
                push(id, None, Rule::StreamSetCount(n));
            }
        }
    }
    out
}
