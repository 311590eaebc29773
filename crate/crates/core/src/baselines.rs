//! Comparison detectors that score every frame without onset context.

use crate::classifier::GaussianBayesModel;
use crate::detector::{DetectorError, DetectorModel, FrameScore, StreamState};
use crate::timeline::Interval;

/// After-the-fact sliding window: at frame `t` each hypothesis `[t - L, t]`
/// is scored as a complete activity by the `d = 1.0` classifier.
pub fn after_the_fact_traces(model: &DetectorModel, state: &StreamState) -> Result<Vec<Vec<FrameScore>>, DetectorError> {
    model.check()?;
    let level = model.bank.level_index(1.0).ok_or(DetectorError::MissingLevel(1.0))?;
    let w = model.vocabulary();
    let mut buf = vec![0.0; model.input_dim()];
    let n = model.classes.main.len();
    let factors: Vec<Vec<f64>> = (0..n)
        .map(|c| model.durations[c].iter().map(|&l| model.prior.factor(c, l as f64)).collect())
        .collect();
    let mut traces = vec![Vec::with_capacity(state.len()); n];
    for t in 0..state.len() {
        for c in 0..n {
            let clf = model.bank.get(c, level);
            let mut best = FrameScore {
                score: 0.0,
                level: None,
                interval: None,
            };
            for (j, &l) in model.durations[c].iter().enumerate() {
                if l > t {
                    continue;
                }
                let t1 = t - l;
                state.histogram().fill_normalized(t1, t, &mut buf[..w]);
                let s = clf.prob_from_score(clf.score_unchecked(&buf)) * factors[c][j];
                if s > best.score || best.interval.is_none() {
                    best = FrameScore {
                        score: s,
                        level: Some(1.0),
                        interval: Some(Interval { t1, t2: t }),
                    };
                }
            }
            traces[c].push(best);
        }
    }
    Ok(traces)
}

/// Gaussian-Bayes sliding window: the posterior of each main class against
/// all classes and background, maximized over window lengths ending at `t`.
/// `gb.classes` must list the main classes in model order followed by the
/// background class.
pub fn gaussian_bayes_traces(
    gb: &GaussianBayesModel,
    durations: &[Vec<usize>],
    state: &StreamState,
) -> Vec<Vec<FrameScore>> {
    let n = durations.len();
    let mut lengths: Vec<usize> = durations.iter().flatten().copied().collect();
    lengths.sort_unstable();
    lengths.dedup();
    let w = state.histogram().vocabulary();
    let mut x = vec![0.0; w];
    let mut logp = vec![0.0; gb.classes.len()];
    let mut traces = vec![Vec::with_capacity(state.len()); n];
    for t in 0..state.len() {
        let mut best = vec![
            FrameScore {
                score: 0.0,
                level: None,
                interval: None,
            };
            n
        ];
        for &l in &lengths {
            if l > t {
                continue;
            }
            state.histogram().fill_normalized(t - l, t, &mut x);
            for (c, lp) in logp.iter_mut().enumerate() {
                *lp = gb.log_density_at(c, &x);
            }
            let m = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logp.iter().map(|v| (v - m).exp()).sum();
            for (c, b) in best.iter_mut().enumerate() {
                let post = (logp[c] - m).exp() / z;
                if post > b.score || b.interval.is_none() {
                    *b = FrameScore {
                        score: post,
                        level: Some(1.0),
                        interval: Some(Interval { t1: t - l, t2: t }),
                    };
                }
            }
        }
        for (tr, b) in traces.iter_mut().zip(best) {
            tr.push(b);
        }
    }
    traces
}
