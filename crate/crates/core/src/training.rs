//! Assembles training sets and fits complete detector models on a set of
//! training streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::classifier::{train_binary, ClassifierBank, ClassifierError, GaussianBayesModel, Sample};
use crate::codebook::{fit_codebook_with, quantize, Codebook, CodebookError, IntegralHistogram};
use crate::config::RunConfig;
use crate::derive_seed;
use crate::detector::{fill_input, DetectorError, DetectorModel, DurationPrior, DurationRule, FeatureLayout, InputMask, StreamState};
use crate::onset::{fit_templates_from_histograms, OnsetError, OnsetTemplate};
use crate::signature::window_spans;
use crate::timeline::{interval_overlap, round_half_up, ActivityKind, Dataset, Interval};

#[derive(Debug, Error, PartialEq)]
pub enum TrainingError {
    #[error("no training streams")]
    NoStreams,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("class {0} has no training instances")]
    NoInstances(String),
    #[error("class {class} at progress {d}: {source}")]
    Classifier {
        class: String,
        d: f64,
        #[source]
        source: ClassifierError,
    },
    #[error(transparent)]
    Gaussian(ClassifierError),
    #[error(transparent)]
    Codebook(#[from] CodebookError),
    #[error(transparent)]
    Onset(#[from] OnsetError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
}

/// Everything about a set of training streams that does not depend on the
/// feature layout: codebook, onset templates, per-stream histograms and
/// signatures, and the duration prior.
pub struct TrainingContext<'a> {
    pub ds: &'a Dataset,
    pub train: Vec<usize>,
    pub cfg: RunConfig,
    pub codebook: Codebook,
    pub templates: Vec<OnsetTemplate>,
    /// `states[i]` belongs to `ds.streams[train[i]]`.
    pub states: Vec<StreamState>,
    pub prior: DurationPrior,
}

impl<'a> TrainingContext<'a> {
    pub fn prepare(ds: &'a Dataset, train: &[usize], cfg: &RunConfig) -> Result<Self, TrainingError> {
        cfg.validate().map_err(TrainingError::Config)?;
        if train.is_empty() {
            return Err(TrainingError::NoStreams);
        }
        let total: usize = train.iter().map(|&i| ds.streams[i].len()).sum();
        let stride = total.div_ceil(cfg.codebook_sample.max(1)).max(1);
        let frames: Vec<&[f64]> = train
            .iter()
            .flat_map(|&i| ds.streams[i].frames())
            .step_by(stride)
            .collect();
        let codebook = fit_codebook_with(&frames, cfg.vocabulary, cfg.codebook_seed, cfg.kmeans_max_iter)?;
        let hists = train
            .iter()
            .map(|&i| IntegralHistogram::from_words(&quantize(&ds.streams[i], &codebook)?, codebook.vocabulary()))
            .collect::<Result<Vec<_>, _>>()?;
        let refs: Vec<&IntegralHistogram> = hists.iter().collect();
        let templates = fit_templates_from_histograms(ds, train, &refs, cfg.n_durations)?;
        let states = hists
            .into_iter()
            .map(|h| StreamState::from_histogram(h, &templates, &cfg.cascade))
            .collect::<Result<Vec<_>, _>>()?;
        let prior = DurationPrior::fit(ds, train, cfg.prior_weight, cfg.sigma_floor);
        Ok(Self {
            ds,
            train: train.to_vec(),
            cfg: cfg.clone(),
            codebook,
            templates,
            states,
            prior,
        })
    }

    /// Prepares a state for a stream outside the training split.
    pub fn state_for(&self, stream: usize) -> Result<StreamState, TrainingError> {
        Ok(StreamState::batch(
            &self.codebook,
            &self.templates,
            &self.cfg.cascade,
            &self.ds.streams[stream],
        )?)
    }

    /// `(slot, interval)` for every main instance of `class` in the training split.
    fn instances(&self, class: &str) -> Vec<(usize, Interval)> {
        let mut out = Vec::new();
        for (slot, &si) in self.train.iter().enumerate() {
            for inst in self.ds.labels_for(&self.ds.streams[si].id) {
                if inst.kind == ActivityKind::Main && inst.class == class {
                    out.push((slot, inst.interval));
                }
            }
        }
        out
    }

    fn input_dim(&self, layout: &FeatureLayout) -> usize {
        layout.input_dim(self.codebook.vocabulary(), self.templates.len(), &self.cfg.cascade)
    }

    fn input(&self, layout: &FeatureLayout, slot: usize, t: usize, t1: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.input_dim(layout)];
        let spans = window_spans(t, &self.cfg.cascade);
        fill_input(&self.states[slot], layout, InputMask::default(), &self.cfg.cascade, &spans, t, t1, &mut x);
        x
    }

    /// Positives are the first `d` fraction of every instance of `class`;
    /// negatives are random hypotheses of a plausible length at progress `d`
    /// that overlap no instance of `class` by more than the IoU limit.
    pub fn build_training_set(&self, class: usize, d: f64, layout: &FeatureLayout) -> Result<Vec<Sample>, TrainingError> {
        let name = &self.ds.classes.main[class];
        let instances = self.instances(name);
        if instances.is_empty() {
            return Err(TrainingError::NoInstances(name.clone()));
        }
        let mut samples = Vec::with_capacity(instances.len() * (1 + self.cfg.neg_ratio));
        for &(slot, iv) in &instances {
            let t = iv.t1 + round_half_up(d * (iv.t2 - iv.t1) as f64);
            samples.push(Sample {
                features: self.input(layout, slot, t, iv.t1),
                positive: true,
            });
        }
        let min_l = instances.iter().map(|(_, iv)| iv.t2 - iv.t1).min().unwrap_or(1);
        let max_l = instances.iter().map(|(_, iv)| iv.t2 - iv.t1).max().unwrap_or(1);
        let wanted = instances.len() * self.cfg.neg_ratio;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.sampling_seed, &[class as u64, d.to_bits()]));
        let mut found = 0;
        let mut attempts = 0;
        while found < wanted && attempts < wanted * 200 {
            attempts += 1;
            let slot = rng.random_range(0..self.train.len());
            let len = self.states[slot].len();
            let l = rng.random_range(min_l..=max_l);
            let offset = round_half_up(d * l as f64);
            if len == 0 || offset >= len {
                continue;
            }
            let t = rng.random_range(offset..len);
            let t1 = t - offset;
            let hyp = Interval {
                t1,
                t2: (t1 + l).min(len - 1),
            };
            let clash = instances
                .iter()
                .any(|&(s, iv)| s == slot && interval_overlap(&hyp, &iv) > self.cfg.neg_max_iou);
            if clash {
                continue;
            }
            samples.push(Sample {
                features: self.input(layout, slot, t, t1),
                positive: false,
            });
            found += 1;
        }
        Ok(samples)
    }

    pub fn train_bank(&self, layout: &FeatureLayout, levels: &[f64]) -> Result<ClassifierBank, TrainingError> {
        let mut classifiers = Vec::with_capacity(self.ds.classes.main.len() * levels.len());
        for (c, name) in self.ds.classes.main.iter().enumerate() {
            for &d in levels {
                let samples = self.build_training_set(c, d, layout)?;
                let clf = train_binary(&samples, &self.cfg.sgd).map_err(|source| TrainingError::Classifier {
                    class: name.clone(),
                    d,
                    source,
                })?;
                classifiers.push(clf);
            }
        }
        Ok(ClassifierBank {
            classes: self.ds.classes.main.clone(),
            progress_levels: levels.to_vec(),
            classifiers,
        })
    }

    pub fn train_model(&self, layout: FeatureLayout) -> Result<DetectorModel, TrainingError> {
        self.train_model_with(layout, &self.cfg.progress_levels, &self.cfg.durations)
    }

    /// Like [`Self::train_model`] with explicit progress levels and duration hypotheses.
    pub fn train_model_with(
        &self,
        layout: FeatureLayout,
        levels: &[f64],
        rule: &DurationRule,
    ) -> Result<DetectorModel, TrainingError> {
        let bank = self.train_bank(&layout, levels)?;
        let model = DetectorModel {
            classes: self.ds.classes.clone(),
            codebook: self.codebook.clone(),
            templates: self.templates.clone(),
            cascade: self.cfg.cascade.clone(),
            layout,
            bank,
            prior: self.prior.clone(),
            durations: rule.hypotheses(&self.prior),
            nms_fraction: self.cfg.nms_fraction,
        };
        model.check()?;
        Ok(model)
    }

    /// Gaussian models of complete-instance word histograms for every main
    /// class plus a `background` class drawn from unlabeled stretches.
    pub fn train_gaussian_bayes(&self) -> Result<GaussianBayesModel, TrainingError> {
        let w = self.codebook.vocabulary();
        let mut per_class = Vec::new();
        let mut all = Vec::new();
        for name in &self.ds.classes.main {
            let inst = self.instances(name);
            let rows: Vec<Vec<f64>> = inst
                .iter()
                .map(|&(slot, iv)| {
                    let mut h = vec![0.0; w];
                    self.states[slot].histogram().fill_normalized(iv.t1, iv.t2, &mut h);
                    h
                })
                .collect();
            all.extend(inst);
            per_class.push((name.clone(), rows));
        }
        if all.is_empty() {
            return Err(TrainingError::NoInstances("background".into()));
        }
        let min_l = all.iter().map(|(_, iv)| iv.t2 - iv.t1).min().unwrap_or(1);
        let max_l = all.iter().map(|(_, iv)| iv.t2 - iv.t1).max().unwrap_or(1);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.sampling_seed, &[u64::MAX]));
        let mut background = Vec::new();
        let mut attempts = 0;
        while background.len() < all.len() && attempts < all.len() * 200 {
            attempts += 1;
            let slot = rng.random_range(0..self.train.len());
            let len = self.states[slot].len();
            let l = rng.random_range(min_l..=max_l);
            if l >= len {
                continue;
            }
            let t1 = rng.random_range(0..len - l);
            let hyp = Interval { t1, t2: t1 + l };
            if all
                .iter()
                .any(|&(s, iv)| s == slot && interval_overlap(&hyp, &iv) > self.cfg.neg_max_iou)
            {
                continue;
            }
            let mut h = vec![0.0; w];
            self.states[slot].histogram().fill_normalized(hyp.t1, hyp.t2, &mut h);
            background.push(h);
        }
        per_class.push((BACKGROUND.to_string(), background));
        GaussianBayesModel::fit(&per_class).map_err(TrainingError::Gaussian)
    }
}

pub const BACKGROUND: &str = "background";

/// Fits a complete model on every stream of `ds`.
pub fn train_model(ds: &Dataset, cfg: &RunConfig) -> Result<DetectorModel, TrainingError> {
    let all: Vec<usize> = (0..ds.streams.len()).collect();
    TrainingContext::prepare(ds, &all, cfg)?.train_model(FeatureLayout::early(cfg.representation))
}
