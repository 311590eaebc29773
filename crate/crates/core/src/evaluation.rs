//! Precision-recall analysis over observation ratios, leave-one-set-out
//! cross-validation and the method and representation comparisons.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{after_the_fact_traces, gaussian_bayes_traces};
use crate::config::RunConfig;
use crate::detector::{detect_prepared, detections_from_traces, pick_peaks, Detection, DetectorError, DetectorModel, FeatureLayout, InputMask, StreamState};
use crate::signature::OnsetRepresentation;
use crate::timeline::{observed_prefix, round_half_up, ActivityKind, Dataset, Interval, TimelineError};
use crate::training::{TrainingContext, TrainingError};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("no ground truth instances")]
    NoGroundTruth,
    #[error("dataset has no sets to hold out")]
    NoFolds,
    #[error(transparent)]
    Timeline(#[from] TimelineError),
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
}

/// Greedy matching of detections of one class in one stream against its
/// ground truth. A detection at `t` may claim an unmatched instance
/// `[g1, g2]` when `g1 <= t` and `t` lies within the observed prefix at
/// `ratio`. Detections are visited in the given order, which should be by
/// descending score. Returns one TP flag per detection.
pub fn match_detections(dets: &[Detection], gt: &[Interval], ratio: f64) -> Result<Vec<bool>, EvalError> {
    let prefixes = gt
        .iter()
        .map(|g| observed_prefix(g, ratio))
        .collect::<Result<Vec<_>, _>>()?;
    let mut taken = vec![false; gt.len()];
    Ok(dets
        .iter()
        .map(|d| {
            let hit = prefixes
                .iter()
                .enumerate()
                .find(|&(i, p)| !taken[i] && p.contains(d.t))
                .map(|(i, _)| i);
            match hit {
                Some(i) => {
                    taken[i] = true;
                    true
                }
                None => false,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Precision and recall at every distinct score, thresholds descending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<PrPoint>,
    pub n_gt: usize,
}

pub fn pr_curve(labeled: &[(f64, bool)], n_gt: usize) -> Result<PrCurve, EvalError> {
    if n_gt == 0 {
        return Err(EvalError::NoGroundTruth);
    }
    let mut sorted = labeled.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = Vec::new();
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == threshold {
            tp += sorted[i].1 as usize;
            seen += 1;
            i += 1;
        }
        points.push(PrPoint {
            threshold,
            precision: tp as f64 / seen as f64,
            recall: tp as f64 / n_gt as f64,
        });
    }
    Ok(PrCurve { points, n_gt })
}

/// Step-wise area: each recall increment weighted by the precision reached there.
pub fn average_precision(curve: &PrCurve) -> f64 {
    let mut prev = 0.0;
    let mut ap = 0.0;
    for p in &curve.points {
        ap += (p.recall - prev) * p.precision;
        prev = p.recall;
    }
    ap
}

/// Detections of one method keyed by stream index.
pub type DetectionSet = Vec<(usize, Vec<Detection>)>;

/// Per-class labeled scores and ground-truth counts pooled over streams.
fn pooled_labels(
    ds: &Dataset,
    dets: &DetectionSet,
    class: &str,
    kind: ActivityKind,
    ratio: f64,
) -> Result<(Vec<(f64, bool)>, usize), EvalError> {
    let mut labeled = Vec::new();
    let mut n_gt = 0;
    for (si, stream_dets) in dets {
        let gt: Vec<Interval> = ds
            .labels_for(&ds.streams[*si].id)
            .iter()
            .filter(|i| i.kind == kind && i.class == class)
            .map(|i| i.interval)
            .collect();
        n_gt += gt.len();
        let mut mine: Vec<Detection> = stream_dets.iter().filter(|d| d.class == class).cloned().collect();
        mine.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.t.cmp(&b.t)));
        let flags = match_detections(&mine, &gt, ratio)?;
        labeled.extend(mine.iter().zip(flags).map(|(d, f)| (d.score, f)));
    }
    Ok((labeled, n_gt))
}

/// Rows are observation ratios, columns are classes; classes without ground
/// truth get no AP and are left out of the mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioTable {
    pub ratios: Vec<f64>,
    pub classes: Vec<String>,
    pub ap: Vec<Vec<Option<f64>>>,
    pub mean: Vec<f64>,
}

impl RatioTable {
    /// Smallest ratio whose mean AP reaches `level`.
    pub fn first_ratio_reaching(&self, level: f64) -> Option<f64> {
        first_ratio_reaching(&self.ratios, &self.mean, level)
    }

    /// Mean of the mean-AP column over ratios `<= max_ratio`.
    pub fn low_ratio_mean(&self, max_ratio: f64) -> f64 {
        let v: Vec<f64> = self
            .ratios
            .iter()
            .zip(&self.mean)
            .filter(|(r, _)| **r <= max_ratio + 1e-12)
            .map(|(_, m)| *m)
            .collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("ratio");
        for c in &self.classes {
            out.push(',');
            out.push_str(c);
        }
        out.push_str(",mean\n");
        for ((r, row), m) in self.ratios.iter().zip(&self.ap).zip(&self.mean) {
            out.push_str(&format!("{r}"));
            for v in row {
                out.push(',');
                if let Some(v) = v {
                    out.push_str(&format!("{v}"));
                }
            }
            out.push_str(&format!(",{m}\n"));
        }
        out
    }
}

pub fn first_ratio_reaching(ratios: &[f64], mean: &[f64], level: f64) -> Option<f64> {
    ratios.iter().zip(mean).find(|(_, m)| **m >= level).map(|(r, _)| *r)
}

/// AP tables plus the PR curves behind them, `curves[ratio][class]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub table: RatioTable,
    pub curves: Vec<Vec<Option<PrCurve>>>,
}

impl Evaluation {
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("ratio,class,threshold,precision,recall\n");
        for (r, row) in self.table.ratios.iter().zip(&self.curves) {
            for (c, curve) in self.table.classes.iter().zip(row) {
                for p in curve.iter().flat_map(|c| &c.points) {
                    out.push_str(&format!("{r},{c},{},{},{}\n", p.threshold, p.precision, p.recall));
                }
            }
        }
        out
    }
}

/// Scores pooled detections of the given classes at every ratio.
pub fn evaluate_detections(
    ds: &Dataset,
    dets: &DetectionSet,
    classes: &[String],
    kind: ActivityKind,
    ratios: &[f64],
) -> Result<Evaluation, EvalError> {
    let mut ap = Vec::with_capacity(ratios.len());
    let mut curves = Vec::with_capacity(ratios.len());
    let mut mean = Vec::with_capacity(ratios.len());
    for &r in ratios {
        let mut row = Vec::with_capacity(classes.len());
        let mut crow = Vec::with_capacity(classes.len());
        for c in classes {
            let (labeled, n_gt) = pooled_labels(ds, dets, c, kind, r)?;
            if n_gt == 0 {
                row.push(None);
                crow.push(None);
                continue;
            }
            let curve = pr_curve(&labeled, n_gt)?;
            row.push(Some(average_precision(&curve)));
            crow.push(Some(curve));
        }
        let present: Vec<f64> = row.iter().flatten().copied().collect();
        mean.push(if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        });
        ap.push(row);
        curves.push(crow);
    }
    Ok(Evaluation {
        table: RatioTable {
            ratios: ratios.to_vec(),
            classes: classes.to_vec(),
            ap,
            mean,
        },
        curves,
    })
}

/// Runs a trained model over the given streams and evaluates its detections.
pub fn mean_ap_vs_ratio(model: &DetectorModel, ds: &Dataset, streams: &[usize], ratios: &[f64]) -> Result<Evaluation, EvalError> {
    let mut dets = Vec::with_capacity(streams.len());
    for &si in streams {
        let state = StreamState::for_model(model, &ds.streams[si])?;
        let out = detect_prepared(model, &ds.streams[si].id, &state, InputMask::default())?;
        dets.push((si, out.detections));
    }
    evaluate_detections(ds, &dets, &model.classes.main, ActivityKind::Main, ratios)
}

/// A detection method compared under cross-validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Early(OnsetRepresentation),
    ContextOnly,
    AfterTheFact,
    GaussianBayes,
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::Early(r) => r.name().to_string(),
            Method::ContextOnly => "CONTEXT_ONLY".into(),
            Method::AfterTheFact => "AFTER_THE_FACT".into(),
            Method::GaussianBayes => "GAUSSIAN_BAYES".into(),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "CONTEXT_ONLY" => Some(Method::ContextOnly),
            "AFTER_THE_FACT" => Some(Method::AfterTheFact),
            "GAUSSIAN_BAYES" => Some(Method::GaussianBayes),
            _ => OnsetRepresentation::parse(s).map(Method::Early),
        }
    }

    /// The onset method and the three baselines.
    pub fn comparison() -> Vec<Method> {
        vec![
            Method::Early(OnsetRepresentation::HistogramPlusMeanMax),
            Method::Early(OnsetRepresentation::NoOnset),
            Method::ContextOnly,
            Method::AfterTheFact,
            Method::GaussianBayes,
        ]
    }

    fn layout(&self) -> Option<FeatureLayout> {
        match self {
            Method::Early(r) => Some(FeatureLayout::early(*r)),
            Method::ContextOnly => Some(FeatureLayout::context_only()),
            Method::AfterTheFact => Some(FeatureLayout::early(OnsetRepresentation::NoOnset)),
            Method::GaussianBayes => None,
        }
    }
}

/// Pooled cross-validated results, one evaluation per method in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub methods: Vec<(String, Evaluation)>,
}

impl CvReport {
    pub fn get(&self, name: &str) -> Option<&Evaluation> {
        self.methods.iter().find(|(n, _)| n == name).map(|(_, e)| e)
    }

    /// Rows are ratios, columns are methods, cells are mean AP.
    pub fn mean_ap_csv(&self) -> String {
        let mut out = String::from("ratio");
        for (n, _) in &self.methods {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        let ratios = self.methods.first().map_or(&[][..], |(_, e)| &e.table.ratios[..]);
        for (i, r) in ratios.iter().enumerate() {
            out.push_str(&format!("{r}"));
            for (_, e) in &self.methods {
                out.push_str(&format!(",{}", e.table.mean[i]));
            }
            out.push('\n');
        }
        out
    }
}

/// Leave-one-set-out cross-validation. Detections from every held-out set
/// are pooled before computing AP. Within a fold all methods share the
/// codebook, onset templates and stream signatures, and methods with the
/// same feature layout share one trained model.
pub fn cross_validate(ds: &Dataset, cfg: &RunConfig, methods: &[Method]) -> Result<CvReport, EvalError> {
    let folds = ds.leave_one_set_out();
    if folds.iter().all(|f| f.test.is_empty()) {
        return Err(EvalError::NoFolds);
    }
    let mut pooled: Vec<DetectionSet> = vec![Vec::new(); methods.len()];
    for fold in folds.iter().filter(|f| !f.test.is_empty()) {
        let ctx = TrainingContext::prepare(ds, &fold.train, cfg)?;
        let states = fold
            .test
            .iter()
            .map(|&si| ctx.state_for(si))
            .collect::<Result<Vec<_>, _>>()?;
        let mut models: Vec<(FeatureLayout, DetectorModel)> = Vec::new();
        let mut gb = None;
        for (mi, method) in methods.iter().enumerate() {
            let model = match method.layout() {
                Some(layout) => {
                    if !models.iter().any(|(l, _)| *l == layout) {
                        models.push((layout, ctx.train_model(layout)?));
                    }
                    models.iter().find(|(l, _)| *l == layout).map(|(_, m)| m)
                }
                None => None,
            };
            for (&si, state) in fold.test.iter().zip(&states) {
                let id = &ds.streams[si].id;
                let dets = match (method, model) {
                    (Method::AfterTheFact, Some(m)) => {
                        let traces = after_the_fact_traces(m, state)?;
                        let windows: Vec<usize> = (0..m.classes.main.len()).map(|c| m.nms_window(c)).collect();
                        detections_from_traces(id, &m.classes.main, &traces, &windows)
                    }
                    (Method::GaussianBayes, _) => {
                        if gb.is_none() {
                            gb = Some(ctx.train_gaussian_bayes()?);
                        }
                        let durations = ctx.cfg.durations.hypotheses(&ctx.prior);
                        let traces = gaussian_bayes_traces(gb.as_ref().unwrap(), &durations, state);
                        let windows: Vec<usize> = ctx
                            .prior
                            .mean
                            .iter()
                            .map(|m| round_half_up(cfg.nms_fraction * m))
                            .collect();
                        detections_from_traces(id, &ds.classes.main, &traces, &windows)
                    }
                    (_, Some(m)) => detect_prepared(m, id, state, InputMask::default())?.detections,
                    (_, None) => unreachable!("every early method has a layout"),
                };
                pooled[mi].push((si, dets));
            }
        }
    }
    let methods = methods
        .iter()
        .zip(&pooled)
        .map(|(m, dets)| {
            evaluate_detections(ds, dets, &ds.classes.main, ActivityKind::Main, &cfg.ratios).map(|e| (m.name(), e))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CvReport { methods })
}

/// Cross-validates each onset representation under identical splits and seeds.
pub fn run_ablation(ds: &Dataset, cfg: &RunConfig, variants: &[OnsetRepresentation]) -> Result<CvReport, EvalError> {
    let methods: Vec<Method> = variants.iter().map(|v| Method::Early(*v)).collect();
    cross_validate(ds, cfg, &methods)
}

/// AP of the weak onset detectors alone: peaks of each response series
/// `G^k`, matched against onset labels over the whole interval.
#[derive(Debug, Clone, PartialEq)]
pub struct OnsetDetectorReport {
    pub classes: Vec<String>,
    pub ap: Vec<Option<f64>>,
    pub mean: f64,
}

pub fn onset_detector_ap(ds: &Dataset, cfg: &RunConfig) -> Result<OnsetDetectorReport, EvalError> {
    let folds = ds.leave_one_set_out();
    let mut pooled: DetectionSet = Vec::new();
    for fold in folds.iter().filter(|f| !f.test.is_empty()) {
        let ctx = TrainingContext::prepare(ds, &fold.train, cfg)?;
        let windows: Vec<usize> = ds
            .classes
            .onset
            .iter()
            .map(|class| {
                let lens: Vec<usize> = ds.instances_of(class, &fold.train).map(|(_, i)| i.interval.len()).collect();
                let mean = lens.iter().sum::<usize>() as f64 / lens.len().max(1) as f64;
                round_half_up(cfg.nms_fraction * mean)
            })
            .collect();
        for &si in &fold.test {
            let state = ctx.state_for(si)?;
            let mut dets = Vec::new();
            for ((class, g), &window) in ds.classes.onset.iter().zip(state.signatures().series()).zip(&windows) {
                for t in pick_peaks(g, window) {
                    dets.push(Detection {
                        stream: ds.streams[si].id.clone(),
                        class: class.clone(),
                        t,
                        t1: t,
                        t2: t,
                        d: 1.0,
                        score: g[t],
                    });
                }
            }
            pooled.push((si, dets));
        }
    }
    let eval = evaluate_detections(ds, &pooled, &ds.classes.onset, ActivityKind::Onset, &[1.0])?;
    Ok(OnsetDetectorReport {
        classes: ds.classes.onset.clone(),
        ap: eval.table.ap[0].clone(),
        mean: eval.table.mean[0],
    })
}
