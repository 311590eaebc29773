//! Seeded generator of labeled feature streams.
//!
//! Each stream has one intention that drives a Markov sequence of main
//! activities. A main activity may be preceded by an onset activity that is
//! correlated with it, separated by a short stretch of background. Frames
//! are drawn from Gaussian clusters: every class owns a categorical
//! distribution over cluster ids, and the emitted vector is the cluster
//! center plus isotropic noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::derive_seed;
use crate::timeline::{ActivityInstance, ActivityKind, ClassTable, Dataset, FeatureStream, Interval, StreamSet};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("unknown preset {0}")]
    UnknownPreset(String),
}

/// Inclusive integer range sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Range {
    pub min: usize,
    pub max: usize,
}

impl Range {
    pub const fn new(min: usize, max: usize) -> Self {
        Self { min, max }
    }

    fn sample(&self, rng: &mut impl Rng) -> usize {
        rng.random_range(self.min..=self.max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub intentions: Vec<String>,
    pub intention_prior: Vec<f64>,
    pub onset_classes: Vec<String>,
    pub main_classes: Vec<String>,
    /// `transitions[i][p][c]`: probability of main class `c` next under
    /// intention `i`, where `p = 0` starts a stream and `p = 1 + c'` follows `c'`.
    pub transitions: Vec<Vec<Vec<f64>>>,
    /// Onset class that may precede each main class.
    pub correlated_onset: Vec<Option<usize>>,
    /// Probability that a main instance is preceded by its correlated onset.
    pub onset_probability: Vec<f64>,
    /// Probability that a background stretch contains an uncorrelated onset.
    pub distractor_rate: f64,
    pub n_feat: usize,
    /// Seed for cluster centers, shared by every stream and dataset seed.
    pub world_seed: u64,
    /// Scale of cluster centers.
    pub center_scale: f64,
    /// Standard deviation of per-frame isotropic noise.
    pub noise: f64,
    pub background_clusters: usize,
    pub approach_clusters: usize,
    pub clusters_per_onset: usize,
    pub clusters_per_main: usize,
    /// Fraction of onset frames drawn from the onset's own clusters; the rest are background.
    pub onset_purity: f64,
    /// Leading fraction of a main activity emitted from clusters shared by all main classes.
    pub approach_fraction: f64,
    /// Main class whose clusters each main class borrows from after the approach.
    pub confusable_with: Vec<Option<usize>>,
    /// Fraction of post-approach frames drawn from the confusable partner's clusters.
    pub body_sharing: f64,
    pub main_duration: Range,
    pub onset_duration: Range,
    pub onset_gap: Range,
    pub background_gap: Range,
    pub activities_per_stream: Range,
    pub n_sets: usize,
    pub streams_per_set: usize,
    pub fps: f64,
}

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn default_transitions(n_intentions: usize, n_main: usize) -> Vec<Vec<Vec<f64>>> {
    // Intention-specific affinity, with repeats of the previous class damped.
    let affinity = [
        [0.35, 0.35, 0.05, 0.05, 0.20],
        [0.10, 0.05, 0.35, 0.35, 0.15],
        [0.15, 0.10, 0.15, 0.15, 0.45],
    ];
    (0..n_intentions)
        .map(|i| {
            (0..=n_main)
                .map(|p| {
                    let mut row: Vec<f64> = (0..n_main)
                        .map(|c| {
                            let a = if i < affinity.len() && n_main == 5 { affinity[i][c] } else { 1.0 };
                            if p == c + 1 {
                                0.5 * a
                            } else {
                                a
                            }
                        })
                        .collect();
                    let s: f64 = row.iter().sum();
                    row.iter_mut().for_each(|v| *v /= s);
                    row
                })
                .collect()
        })
        .collect()
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let intentions = names(&["friendly", "hostile", "avoiding"]);
        let main = names(&["handshake", "hug", "punch", "throw", "run_away"]);
        Self {
            name: "DEFAULT".into(),
            intention_prior: vec![1.0 / 3.0; 3],
            transitions: default_transitions(intentions.len(), main.len()),
            intentions,
            onset_classes: names(&["pointing", "reaching", "standing_up", "waving"]),
            // handshake <- waving, hug <- standing_up, punch <- pointing, throw <- reaching.
            correlated_onset: vec![Some(3), Some(2), Some(0), Some(1), None],
            onset_probability: vec![0.9, 0.9, 0.9, 0.9, 0.0],
            main_classes: main,
            distractor_rate: 0.15,
            n_feat: 16,
            world_seed: 2014,
            center_scale: 3.0,
            noise: 0.6,
            background_clusters: 8,
            approach_clusters: 3,
            clusters_per_onset: 2,
            clusters_per_main: 3,
            onset_purity: 0.8,
            approach_fraction: 0.3,
            confusable_with: vec![Some(1), Some(0), Some(3), Some(2), None],
            body_sharing: 0.45,
            main_duration: Range::new(100, 150),
            onset_duration: Range::new(15, 25),
            onset_gap: Range::new(85, 95),
            background_gap: Range::new(20, 60),
            activities_per_stream: Range::new(2, 6),
            n_sets: 8,
            streams_per_set: 8,
            fps: 15.0,
        }
    }
}

pub const PRESET_NAMES: [&str; 3] = ["STRONG_ONSET", "WEAK_ONSET", "NO_ONSET_CONTROL"];

/// The shipped scenario presets.
pub fn preset_configs() -> Vec<ScenarioConfig> {
    let strong = ScenarioConfig {
        name: "STRONG_ONSET".into(),
        ..ScenarioConfig::default()
    };
    let weak = ScenarioConfig {
        name: "WEAK_ONSET".into(),
        onset_probability: vec![0.5, 0.5, 0.5, 0.5, 0.0],
        noise: 1.2,
        onset_purity: 0.15,
        distractor_rate: 0.3,
        ..ScenarioConfig::default()
    };
    let null = ScenarioConfig {
        name: "NO_ONSET_CONTROL".into(),
        onset_probability: vec![0.0; 5],
        distractor_rate: 0.5,
        ..ScenarioConfig::default()
    };
    vec![strong, weak, null]
}

pub fn preset(name: &str) -> Result<ScenarioConfig, SynthError> {
    preset_configs()
        .into_iter()
        .find(|c| c.name == name)
        .ok_or_else(|| SynthError::UnknownPreset(name.to_string()))
}

fn check_row(row: &[f64], what: &str) -> Result<(), SynthError> {
    if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(SynthError::Invalid(format!("{what} is not a probability distribution")));
    }
    Ok(())
}

fn check_range(r: &Range, what: &str, min: usize) -> Result<(), SynthError> {
    if r.min > r.max || r.min < min {
        return Err(SynthError::Invalid(format!("{what} range {}..={} is invalid", r.min, r.max)));
    }
    Ok(())
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let n_main = self.main_classes.len();
        let n_on = self.onset_classes.len();
        let n_i = self.intentions.len();
        if n_main == 0 || n_i == 0 {
            return Err(SynthError::Invalid("need at least one intention and one main class".into()));
        }
        if self.intention_prior.len() != n_i {
            return Err(SynthError::Invalid("intention prior length mismatch".into()));
        }
        check_row(&self.intention_prior, "intention prior")?;
        if self.transitions.len() != n_i {
            return Err(SynthError::Invalid("transition table needs one block per intention".into()));
        }
        for (i, block) in self.transitions.iter().enumerate() {
            if block.len() != n_main + 1 || block.iter().any(|r| r.len() != n_main) {
                return Err(SynthError::Invalid(format!("transition block {i} has the wrong shape")));
            }
            for (p, row) in block.iter().enumerate() {
                check_row(row, &format!("transition row ({i}, {p})"))?;
            }
        }
        if self.correlated_onset.len() != n_main || self.onset_probability.len() != n_main {
            return Err(SynthError::Invalid("onset correlation needs one entry per main class".into()));
        }
        if self.confusable_with.len() != n_main || self.confusable_with.iter().flatten().any(|&c| c >= n_main) {
            return Err(SynthError::Invalid("confusable_with needs one valid entry per main class".into()));
        }
        if self.correlated_onset.iter().flatten().any(|&k| k >= n_on) {
            return Err(SynthError::Invalid("correlated onset index out of range".into()));
        }
        for p in self
            .onset_probability
            .iter()
            .chain([&self.distractor_rate, &self.onset_purity, &self.approach_fraction, &self.body_sharing]) {
            if !(0.0..=1.0).contains(p) {
                return Err(SynthError::Invalid(format!("probability {p} outside [0, 1]")));
            }
        }
        if self.n_feat == 0 || self.background_clusters == 0 || self.approach_clusters == 0 {
            return Err(SynthError::Invalid("feature and cluster counts must be positive".into()));
        }
        if self.clusters_per_onset == 0 || self.clusters_per_main == 0 {
            return Err(SynthError::Invalid("every class needs at least one cluster".into()));
        }
        if !(self.noise >= 0.0 && self.center_scale > 0.0 && self.fps > 0.0) {
            return Err(SynthError::Invalid("noise, scale and fps must be positive".into()));
        }
        check_range(&self.main_duration, "main duration", 2)?;
        check_range(&self.onset_duration, "onset duration", 2)?;
        check_range(&self.onset_gap, "onset gap", 1)?;
        check_range(&self.background_gap, "background gap", 1)?;
        check_range(&self.activities_per_stream, "activities per stream", 1)?;
        if self.n_sets == 0 || self.streams_per_set == 0 {
            return Err(SynthError::Invalid("need at least one set and stream".into()));
        }
        Ok(())
    }

    /// `P(onset k precedes main c)` as a `[k][c]` table.
    pub fn correlation_table(&self) -> Vec<Vec<f64>> {
        let mut t = vec![vec![0.0; self.main_classes.len()]; self.onset_classes.len()];
        for (c, k) in self.correlated_onset.iter().enumerate() {
            if let Some(k) = k {
                t[*k][c] = self.onset_probability[c];
            }
        }
        t
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    fn n_clusters(&self) -> usize {
        self.background_clusters
            + self.approach_clusters
            + self.onset_classes.len() * self.clusters_per_onset
            + self.main_classes.len() * self.clusters_per_main
    }

    fn centers(&self) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.world_seed);
        let normal = Normal::new(0.0, self.center_scale).expect("positive scale");
        (0..self.n_clusters())
            .map(|_| (0..self.n_feat).map(|_| normal.sample(&mut rng)).collect())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Segment {
    Background,
    Onset(usize),
    Approach,
    Main(usize),
}

struct Emitter {
    centers: Vec<Vec<f64>>,
    background: std::ops::Range<usize>,
    approach: std::ops::Range<usize>,
    onset_base: usize,
    main_base: usize,
    per_onset: usize,
    per_main: usize,
    onset_purity: f64,
    confusable_with: Vec<Option<usize>>,
    body_sharing: f64,
    noise: Normal<f64>,
}

impl Emitter {
    fn new(cfg: &ScenarioConfig) -> Self {
        let b = cfg.background_clusters;
        let a = cfg.approach_clusters;
        let onset_base = b + a;
        Self {
            centers: cfg.centers(),
            background: 0..b,
            approach: b..b + a,
            onset_base,
            main_base: onset_base + cfg.onset_classes.len() * cfg.clusters_per_onset,
            per_onset: cfg.clusters_per_onset,
            per_main: cfg.clusters_per_main,
            onset_purity: cfg.onset_purity,
            confusable_with: cfg.confusable_with.clone(),
            body_sharing: cfg.body_sharing,
            noise: Normal::new(0.0, cfg.noise.max(1e-12)).expect("finite noise"),
        }
    }

    fn cluster(&self, seg: Segment, rng: &mut impl Rng) -> usize {
        match seg {
            Segment::Background => rng.random_range(self.background.clone()),
            Segment::Approach => rng.random_range(self.approach.clone()),
            Segment::Onset(k) => {
                if rng.random::<f64>() < self.onset_purity {
                    self.onset_base + k * self.per_onset + rng.random_range(0..self.per_onset)
                } else {
                    rng.random_range(self.background.clone())
                }
            }
            Segment::Main(c) => {
                let owner = match self.confusable_with[c] {
                    Some(p) if rng.random::<f64>() < self.body_sharing => p,
                    _ => c,
                };
                self.main_base + owner * self.per_main + rng.random_range(0..self.per_main)
            }
        }
    }

    fn emit(&self, seg: Segment, rng: &mut impl Rng, out: &mut Vec<f64>) {
        let c = self.cluster(seg, rng);
        for &m in &self.centers[c] {
            out.push(m + self.noise.sample(rng));
        }
    }
}

fn sample_index(weights: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Draws `n` main classes from the transition table under intention `i`.
pub fn sample_activity_sequence(cfg: &ScenarioConfig, intention: usize, n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut prev = 0;
    (0..n)
        .map(|_| {
            let c = sample_index(&cfg.transitions[intention][prev], rng);
            prev = c + 1;
            c
        })
        .collect()
}

/// A generated dataset and where it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDataset {
    pub dataset: Dataset,
    pub seed: u64,
    pub config_hash: String,
}

fn generate_stream(cfg: &ScenarioConfig, emitter: &Emitter, id: String, seed: u64) -> (FeatureStream, Vec<ActivityInstance>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let intention = sample_index(&cfg.intention_prior, &mut rng);
    let n = cfg.activities_per_stream.sample(&mut rng);
    let mains = sample_activity_sequence(cfg, intention, n, &mut rng);
    let intention_name = cfg.intentions[intention].clone();

    let mut plan: Vec<(Segment, usize)> = Vec::new();
    let mut labels: Vec<(String, ActivityKind, usize, usize)> = Vec::new();
    let mut cursor = 0usize;
    let push = |plan: &mut Vec<(Segment, usize)>, seg: Segment, len: usize, cursor: &mut usize| {
        plan.push((seg, len));
        *cursor += len;
    };
    for &c in &mains {
        let gap = cfg.background_gap.sample(&mut rng);
        if !cfg.onset_classes.is_empty() && rng.random::<f64>() < cfg.distractor_rate {
            let k = rng.random_range(0..cfg.onset_classes.len());
            let len = cfg.onset_duration.sample(&mut rng);
            let lead = gap / 2;
            push(&mut plan, Segment::Background, lead, &mut cursor);
            labels.push((cfg.onset_classes[k].clone(), ActivityKind::Onset, cursor, len));
            push(&mut plan, Segment::Onset(k), len, &mut cursor);
            push(&mut plan, Segment::Background, gap - lead, &mut cursor);
        } else {
            push(&mut plan, Segment::Background, gap, &mut cursor);
        }
        if let Some(k) = cfg.correlated_onset[c] {
            if rng.random::<f64>() < cfg.onset_probability[c] {
                let len = cfg.onset_duration.sample(&mut rng);
                labels.push((cfg.onset_classes[k].clone(), ActivityKind::Onset, cursor, len));
                push(&mut plan, Segment::Onset(k), len, &mut cursor);
                let g = cfg.onset_gap.sample(&mut rng);
                push(&mut plan, Segment::Background, g, &mut cursor);
            }
        }
        let len = cfg.main_duration.sample(&mut rng);
        let approach = ((len as f64) * cfg.approach_fraction).round() as usize;
        labels.push((cfg.main_classes[c].clone(), ActivityKind::Main, cursor, len));
        push(&mut plan, Segment::Approach, approach, &mut cursor);
        push(&mut plan, Segment::Main(c), len - approach, &mut cursor);
    }
    let tail = cfg.background_gap.sample(&mut rng);
    push(&mut plan, Segment::Background, tail, &mut cursor);

    let mut data = Vec::with_capacity(cursor * cfg.n_feat);
    for (seg, len) in plan {
        for _ in 0..len {
            emitter.emit(seg, &mut rng, &mut data);
        }
    }
    let stream = FeatureStream::from_flat(id, cfg.fps, cfg.n_feat, data)
        .expect("generated frames have the configured width")
        .with_intention(Some(intention_name.clone()));
    let labels = labels
        .into_iter()
        .map(|(class, kind, start, len)| ActivityInstance {
            class,
            kind,
            interval: Interval {
                t1: start,
                t2: start + len - 1,
            },
            intention: Some(intention_name.clone()),
        })
        .collect();
    (stream, labels)
}

/// Generates a full dataset of `n_sets * streams_per_set` streams.
pub fn sample_scenario(cfg: &ScenarioConfig, seed: u64) -> Result<GeneratedDataset, SynthError> {
    cfg.validate()?;
    let emitter = Emitter::new(cfg);
    let mut ds = Dataset {
        classes: ClassTable {
            onset: cfg.onset_classes.clone(),
            main: cfg.main_classes.clone(),
        },
        intentions: cfg.intentions.clone(),
        ..Dataset::default()
    };
    for s in 0..cfg.n_sets {
        let mut set = StreamSet {
            name: format!("set{s:02}"),
            streams: Vec::new(),
        };
        for j in 0..cfg.streams_per_set {
            let id = format!("s{s:02}_{j:02}");
            let (stream, labels) = generate_stream(cfg, &emitter, id.clone(), derive_seed(seed, &[s as u64, j as u64]));
            set.streams.push(id.clone());
            ds.streams.push(stream);
            ds.labels.insert(id, labels);
        }
        ds.sets.push(set);
    }
    Ok(GeneratedDataset {
        dataset: ds,
        seed,
        config_hash: cfg.hash(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeline::validate_dataset;

    fn small(cfg: ScenarioConfig) -> ScenarioConfig {
        ScenarioConfig {
            n_sets: 2,
            streams_per_set: 3,
            ..cfg
        }
    }

    #[test]
    fn presets_valid_and_named() {
        for c in preset_configs() {
            c.validate().unwrap();
        }
        let strong = preset("STRONG_ONSET").unwrap();
        for (c, k) in strong.correlated_onset.iter().enumerate() {
            if k.is_some() {
                assert!(strong.onset_probability[c] >= 0.9);
            }
        }
        assert!(preset("NOPE").is_err());
    }

    #[test]
    fn forced_correlation_precedes_every_main() {
        let cfg = small(ScenarioConfig {
            correlated_onset: vec![Some(0), Some(1), Some(2), Some(3), Some(0)],
            onset_probability: vec![1.0; 5],
            distractor_rate: 0.0,
            ..ScenarioConfig::default()
        });
        let g = sample_scenario(&cfg, 3).unwrap();
        for labels in g.dataset.labels.values() {
            for (i, inst) in labels.iter().enumerate() {
                if inst.kind == ActivityKind::Main {
                    assert!(i > 0 && labels[i - 1].kind == ActivityKind::Onset);
                }
            }
        }
    }

    #[test]
    fn zero_correlation_gives_no_onsets() {
        let cfg = small(ScenarioConfig {
            onset_probability: vec![0.0; 5],
            distractor_rate: 0.0,
            ..ScenarioConfig::default()
        });
        let g = sample_scenario(&cfg, 3).unwrap();
        assert!(g.dataset.labels.values().flatten().all(|i| i.kind == ActivityKind::Main));
    }

    #[test]
    fn deterministic_and_well_formed() {
        let cfg = small(ScenarioConfig::default());
        let a = sample_scenario(&cfg, 11).unwrap();
        let b = sample_scenario(&cfg, 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.dataset.streams[0], sample_scenario(&cfg, 12).unwrap().dataset.streams[0]);
        assert!(validate_dataset(&a.dataset).is_empty());
    }

    #[test]
    fn invalid_rows_rejected() {
        let mut cfg = ScenarioConfig::default();
        cfg.transitions[0][0][0] += 0.5;
        assert!(matches!(cfg.validate(), Err(SynthError::Invalid(_))));
        let cfg = ScenarioConfig {
            onset_probability: vec![1.5, 0.0, 0.0, 0.0, 0.0],
            ..ScenarioConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn transitions_match_table_chi_square() {
        // First-step draws under each intention against the start row.
        let cfg = ScenarioConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 20_000;
        for i in 0..cfg.intentions.len() {
            let mut counts = [0usize; 5];
            let mut pair_counts = vec![[0usize; 5]; 5];
            for _ in 0..n {
                let seq = sample_activity_sequence(&cfg, i, 2, &mut rng);
                counts[seq[0]] += 1;
                pair_counts[seq[0]][seq[1]] += 1;
            }
            let chi = |obs: &[usize], probs: &[f64]| -> f64 {
                let total: usize = obs.iter().sum();
                obs.iter()
                    .zip(probs)
                    .map(|(&o, &p)| {
                        let e = p * total as f64;
                        (o as f64 - e).powi(2) / e
                    })
                    .sum()
            };
            // 4 degrees of freedom, p = 0.001 critical value 18.47.
            assert!(chi(&counts, &cfg.transitions[i][0]) < 18.47);
            for p in 0..5 {
                assert!(chi(&pair_counts[p], &cfg.transitions[i][p + 1]) < 18.47);
            }
        }
    }
}
