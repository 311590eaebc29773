//! Linear probabilistic classifiers and the Gaussian naive-Bayes baseline.
//!
//! [`train_binary`] fits an L2-regularized hinge-loss linear model by averaged
//! SGD, re-solves the intercept exactly for the learned weights, then fits a
//! Platt sigmoid on a held-out slice so scores become probabilities.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ClassifierError {
    #[error("training data needs both classes (positives: {positives}, negatives: {negatives})")]
    SingleClass { positives: usize, negatives: usize },
    #[error("input dimension {got} does not match model dimension {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("samples have inconsistent dimensions")]
    RaggedSamples,
    #[error("class {0} has no fitted model")]
    UnknownClass(String),
    #[error("class {0} has no samples")]
    EmptyClass(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub positive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SgdConfig {
    /// L2 regularization strength.
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Fraction of samples held out for the Platt fit.
    pub calibration_fraction: f64,
    /// Reweight hinge losses so both classes carry equal total weight.
    pub balance_classes: bool,
    /// Z-score features before training; the scaling is folded into the weights.
    pub standardize: bool,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            epochs: 15,
            seed: 17,
            calibration_fraction: 0.2,
            balance_classes: true,
            standardize: true,
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProbClassifier {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub platt_a: f64,
    pub platt_b: f64,
}

impl LinearProbClassifier {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Raw margin `w . x + bias`, no dimension check.
    #[inline]
    pub fn score_unchecked(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }

    #[inline]
    pub fn prob_from_score(&self, score: f64) -> f64 {
        sigmoid(self.platt_a * score + self.platt_b)
    }

    pub fn score(&self, x: &[f64]) -> Result<f64, ClassifierError> {
        if x.len() != self.dim() {
            return Err(ClassifierError::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self.score_unchecked(x))
    }

    pub fn predict_prob(&self, x: &[f64]) -> Result<f64, ClassifierError> {
        self.score(x).map(|s| self.prob_from_score(s))
    }
}

fn cmp_features(a: &Sample, b: &Sample) -> Ordering {
    b.positive.cmp(&a.positive).then_with(|| {
        a.features
            .iter()
            .zip(&b.features)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

/// Trains a probabilistic linear classifier. Samples are put in a canonical
/// order first, so the result does not depend on the input order.
pub fn train_binary(samples: &[Sample], cfg: &SgdConfig) -> Result<LinearProbClassifier, ClassifierError> {
    let positives = samples.iter().filter(|s| s.positive).count();
    let negatives = samples.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(ClassifierError::SingleClass { positives, negatives });
    }
    let dim = samples[0].features.len();
    if samples.iter().any(|s| s.features.len() != dim) {
        return Err(ClassifierError::RaggedSamples);
    }
    let mut sorted: Vec<&Sample> = samples.iter().collect();
    sorted.sort_by(|a, b| cmp_features(a, b));

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut pos_idx, mut neg_idx): (Vec<usize>, Vec<usize>) = (0..sorted.len()).partition(|&i| sorted[i].positive);
    pos_idx.shuffle(&mut rng);
    neg_idx.shuffle(&mut rng);
    // Stratified calibration split; a class with a single sample stays in training.
    let take = |n: usize| if n < 2 { 0 } else { ((n as f64 * cfg.calibration_fraction).round() as usize).clamp(1, n - 1) };
    let (np, nn) = (take(pos_idx.len()), take(neg_idx.len()));
    let calib: Vec<usize> = pos_idx[..np].iter().chain(&neg_idx[..nn]).copied().collect();
    let mut train: Vec<usize> = pos_idx[np..].iter().chain(&neg_idx[nn..]).copied().collect();
    train.sort_unstable();

    let (mean, scale) = if cfg.standardize {
        standardization(sorted.iter().map(|s| s.features.as_slice()), dim)
    } else {
        (vec![0.0; dim], vec![1.0; dim])
    };
    let xs: Vec<Vec<f64>> = sorted
        .iter()
        .map(|s| s.features.iter().zip(&mean).zip(&scale).map(|((v, m), sc)| (v - m) / sc).collect())
        .collect();
    let ys: Vec<f64> = sorted.iter().map(|s| if s.positive { 1.0 } else { -1.0 }).collect();
    let n_pos = train.iter().filter(|&&i| sorted[i].positive).count();
    let n_neg = train.len() - n_pos;
    let weight_of = |i: usize| -> f64 {
        if !cfg.balance_classes {
            1.0
        } else if sorted[i].positive {
            train.len() as f64 / (2 * n_pos) as f64
        } else {
            train.len() as f64 / (2 * n_neg) as f64
        }
    };

    let (w, _) = averaged_sgd(&xs, &ys, &train, &weight_of, dim, cfg, &mut rng);
    // The intercept is one scalar; re-solve it over every sample.
    let all_weight = |positive: bool| -> f64 {
        match (cfg.balance_classes, positive) {
            (false, _) => 1.0,
            (true, true) => sorted.len() as f64 / (2 * positives) as f64,
            (true, false) => sorted.len() as f64 / (2 * negatives) as f64,
        }
    };
    let margins: Vec<(f64, f64, f64)> = (0..sorted.len())
        .map(|i| (dot(&w, &xs[i]), ys[i], all_weight(sorted[i].positive)))
        .collect();
    let b = optimal_bias(&margins);

    // Fold the standardization back into raw-feature weights.
    let weights: Vec<f64> = w.iter().zip(&scale).map(|(wi, s)| wi / s).collect();
    let bias = b - weights.iter().zip(&mean).map(|(wi, m)| wi * m).sum::<f64>();

    let calib_set = if calib.is_empty() { &train } else { &calib };
    let scores: Vec<f64> = calib_set.iter().map(|&i| dot(&weights, &sorted[i].features) + bias).collect();
    let labels: Vec<bool> = calib_set.iter().map(|&i| sorted[i].positive).collect();
    let (a, bb) = platt_fit(&scores, &labels);
    Ok(LinearProbClassifier {
        weights,
        bias,
        platt_a: -a,
        platt_b: -bb,
    })
}

fn standardization<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; dim];
    let mut n = 0.0;
    for r in rows.clone() {
        n += 1.0;
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }
    let mut var = vec![0.0; dim];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let scale = var
        .into_iter()
        .map(|s| {
            let sd = (s / n).sqrt();
            if sd > 1e-3 {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

fn averaged_sgd(
    xs: &[Vec<f64>],
    ys: &[f64],
    train: &[usize],
    weight_of: &dyn Fn(usize) -> f64,
    dim: usize,
    cfg: &SgdConfig,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, f64) {
    let mean_sq = train.iter().map(|&i| dot(&xs[i], &xs[i])).sum::<f64>() / train.len() as f64;
    let eta0 = 1.0 / mean_sq.max(1e-12);
    let lambda = cfg.lambda;
    let t0 = 1.0 / (lambda * eta0);
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut avg = vec![0.0; dim];
    let mut avg_b = 0.0;
    let mut n_avg = 0.0;
    let mut order = train.to_vec();
    let mut t = 0.0;
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        for &i in &order {
            let eta = 1.0 / (lambda * (t + t0));
            let margin = ys[i] * (dot(&w, &xs[i]) + b);
            let decay = 1.0 - eta * lambda;
            for wi in &mut w {
                *wi *= decay;
            }
            if margin < 1.0 {
                let step = eta * weight_of(i) * ys[i];
                for (wi, xi) in w.iter_mut().zip(&xs[i]) {
                    *wi += step * xi;
                }
                b += step * 0.1;
            }
            t += 1.0;
            if epoch >= cfg.epochs / 2 {
                n_avg += 1.0;
                let r = 1.0 / n_avg;
                for (a, wi) in avg.iter_mut().zip(&w) {
                    *a += (wi - *a) * r;
                }
                avg_b += (b - avg_b) * r;
            }
        }
    }
    if n_avg == 0.0 {
        (w, b)
    } else {
        (avg, avg_b)
    }
}

/// Intercept minimizing the weighted hinge loss for fixed margins `(w.x, y, c)`.
/// The loss is convex and piecewise linear in the intercept; when the minimum
/// is attained on an interval, its midpoint is returned.
pub(crate) fn optimal_bias(margins: &[(f64, f64, f64)]) -> f64 {
    // Breakpoint b = y - m: positives leave the active set there, negatives enter.
    let mut bps: Vec<(f64, f64)> = margins.iter().map(|&(m, y, c)| (y - m, c)).collect();
    bps.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total_pos: f64 = margins.iter().filter(|m| m.1 > 0.0).map(|m| m.2).sum();
    let total: f64 = margins.iter().map(|m| m.2).sum();
    let tol = 1e-12 * total.max(1.0);
    let mut slope = -total_pos;
    for (j, &(bp, c)) in bps.iter().enumerate() {
        slope += c;
        if slope > tol {
            return bp;
        }
        if slope.abs() <= tol {
            let next = bps.get(j + 1).map_or(bp, |n| n.0);
            return 0.5 * (bp + next);
        }
    }
    bps.last().map_or(0.0, |b| b.0)
}

/// Platt sigmoid fit by Newton's method with backtracking, using smoothed
/// targets. Returns `(A, B)` for `P(y = 1 | f) = 1 / (1 + exp(A f + B))`.
pub(crate) fn platt_fit(scores: &[f64], labels: &[bool]) -> (f64, f64) {
    let prior1 = labels.iter().filter(|&&l| l).count() as f64;
    let prior0 = labels.len() as f64 - prior1;
    let hi = (prior1 + 1.0) / (prior1 + 2.0);
    let lo = 1.0 / (prior0 + 2.0);
    let targets: Vec<f64> = labels.iter().map(|&l| if l { hi } else { lo }).collect();
    let (max_iter, min_step, sigma, eps) = (100, 1e-10, 1e-12, 1e-5);
    let mut a = 0.0;
    let mut b = ((prior0 + 1.0) / (prior1 + 1.0)).ln();

    let objective = |a: f64, b: f64| -> f64 {
        scores
            .iter()
            .zip(&targets)
            .map(|(&f, &t)| {
                let fapb = f * a + b;
                if fapb >= 0.0 {
                    t * fapb + (1.0 + (-fapb).exp()).ln()
                } else {
                    (t - 1.0) * fapb + (1.0 + fapb.exp()).ln()
                }
            })
            .sum()
    };
    let mut fval = objective(a, b);
    for _ in 0..max_iter {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (sigma, sigma, 0.0, 0.0, 0.0);
        for (&f, &t) in scores.iter().zip(&targets) {
            let fapb = f * a + b;
            let (p, q) = if fapb >= 0.0 {
                let e = (-fapb).exp();
                (e / (1.0 + e), 1.0 / (1.0 + e))
            } else {
                let e = fapb.exp();
                (1.0 / (1.0 + e), e / (1.0 + e))
            };
            let d2 = p * q;
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
            let d1 = t - p;
            g1 += f * d1;
            g2 += d1;
        }
        if g1.abs() < eps && g2.abs() < eps {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        while step >= min_step {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                break;
            }
            step /= 2.0;
        }
        if step < min_step {
            break;
        }
    }
    (a, b)
}

/// One classifier per (main class, progress level), stored class-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierBank {
    pub classes: Vec<String>,
    pub progress_levels: Vec<f64>,
    pub classifiers: Vec<LinearProbClassifier>,
}

pub fn default_progress_levels() -> Vec<f64> {
    (1..=10).map(|i| i as f64 / 10.0).collect()
}

impl ClassifierBank {
    pub fn get(&self, class: usize, level: usize) -> &LinearProbClassifier {
        &self.classifiers[class * self.progress_levels.len() + level]
    }

    pub fn input_dim(&self) -> usize {
        self.classifiers.first().map_or(0, LinearProbClassifier::dim)
    }

    /// Index of the level equal to `d`, if present.
    pub fn level_index(&self, d: f64) -> Option<usize> {
        self.progress_levels.iter().position(|&l| (l - d).abs() < 1e-12)
    }

    pub fn is_consistent(&self) -> bool {
        self.classifiers.len() == self.classes.len() * self.progress_levels.len()
            && self.classifiers.iter().all(|c| c.dim() == self.input_dim())
    }
}

/// Per-class diagonal Gaussian over word histograms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianBayesModel {
    pub classes: Vec<String>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

pub const VARIANCE_FLOOR: f64 = 1e-4;

impl GaussianBayesModel {
    pub fn fit(per_class: &[(String, Vec<Vec<f64>>)]) -> Result<Self, ClassifierError> {
        let mut model = Self {
            classes: Vec::new(),
            means: Vec::new(),
            variances: Vec::new(),
        };
        for (name, rows) in per_class {
            if rows.is_empty() {
                return Err(ClassifierError::EmptyClass(name.clone()));
            }
            let dim = rows[0].len();
            if rows.iter().any(|r| r.len() != dim) {
                return Err(ClassifierError::RaggedSamples);
            }
            let n = rows.len() as f64;
            let mean: Vec<f64> = (0..dim).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
            let var: Vec<f64> = (0..dim)
                .map(|j| (rows.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).max(VARIANCE_FLOOR))
                .collect();
            model.classes.push(name.clone());
            model.means.push(mean);
            model.variances.push(var);
        }
        Ok(model)
    }

    pub fn class_index(&self, class: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == class)
    }

    pub(crate) fn log_density_at(&self, c: usize, x: &[f64]) -> f64 {
        const LN_2PI: f64 = 1.837_877_066_409_345_3;
        self.means[c]
            .iter()
            .zip(&self.variances[c])
            .zip(x)
            .map(|((m, v), xi)| -0.5 * (LN_2PI + v.ln() + (xi - m) * (xi - m) / v))
            .sum()
    }

    /// Diagonal Gaussian log-density of `x` under `class`.
    pub fn gaussian_bayes_score(&self, x: &[f64], class: &str) -> Result<f64, ClassifierError> {
        let c = self.class_index(class).ok_or_else(|| ClassifierError::UnknownClass(class.to_string()))?;
        if x.len() != self.means[c].len() {
            return Err(ClassifierError::Dimension {
                expected: self.means[c].len(),
                got: x.len(),
            });
        }
        Ok(self.log_density_at(c, x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn s(features: Vec<f64>, positive: bool) -> Sample {
        Sample { features, positive }
    }

    fn separable() -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        (0..120)
            .map(|i| {
                let positive = i % 2 == 0;
                let shift = if positive { 1.5 } else { -1.5 };
                s(vec![shift + rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)], positive)
            })
            .collect()
    }

    #[test]
    fn separable_toy_set_is_learned() {
        let data = separable();
        let clf = train_binary(&data, &SgdConfig::default()).unwrap();
        let correct = data
            .iter()
            .filter(|x| (clf.score(&x.features).unwrap() > 0.0) == x.positive)
            .count();
        assert_eq!(correct, data.len());
        assert!(clf.platt_a > 0.0);
    }

    #[test]
    fn mirrored_data_gives_odd_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut data = Vec::new();
        for _ in 0..60 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let positive = x[0] + 0.5 * x[1] > 0.0;
            data.push(s(x.clone(), positive));
            data.push(s(x.iter().map(|v| -v).collect(), !positive));
        }
        let cfg = SgdConfig {
            standardize: false,
            ..SgdConfig::default()
        };
        let clf = train_binary(&data, &cfg).unwrap();
        for d in &data {
            let neg: Vec<f64> = d.features.iter().map(|v| -v).collect();
            let (a, b) = (clf.score(&d.features).unwrap(), clf.score(&neg).unwrap());
            assert!((a + b).abs() < 1e-6, "{a} vs {b}");
        }
        assert!((clf.prob_from_score(0.0) - sigmoid(clf.platt_b)).abs() < 1e-15);
    }

    #[test]
    fn deterministic_and_order_invariant() {
        let data = separable();
        let cfg = SgdConfig::default();
        let a = train_binary(&data, &cfg).unwrap();
        assert_eq!(a, train_binary(&data, &cfg).unwrap());
        let mut rev = data.clone();
        rev.reverse();
        assert_eq!(a, train_binary(&rev, &cfg).unwrap());
    }

    #[test]
    fn single_class_is_rejected() {
        let data = vec![s(vec![1.0], true), s(vec![2.0], true)];
        assert_eq!(
            train_binary(&data, &SgdConfig::default()).unwrap_err(),
            ClassifierError::SingleClass { positives: 2, negatives: 0 }
        );
    }

    #[test]
    fn probability_examples() {
        let clf = LinearProbClassifier {
            weights: vec![1.0, -2.0],
            bias: 0.5,
            platt_a: 1.5,
            platt_b: -0.75,
        };
        assert!(clf.predict_prob(&[1e6, 0.0]).unwrap() > 1.0 - 1e-12);
        // Score 0.5 puts the Platt argument at zero.
        assert_eq!(clf.predict_prob(&[0.0, 0.0]).unwrap(), 0.5);
        let x = [0.3, 0.7];
        let z: f64 = 1.5 * (0.3 - 1.4 + 0.5) - 0.75;
        assert!((clf.predict_prob(&x).unwrap() - 1.0 / (1.0 + (-z).exp())).abs() < 1e-15);
        assert!(clf.predict_prob(&[1.0]).is_err());
    }

    #[test]
    fn bias_search_examples() {
        // Symmetric margins put the optimum interval around zero.
        let m = [(0.2, 1.0, 1.0), (-0.2, -1.0, 1.0), (2.0, 1.0, 1.0), (-2.0, -1.0, 1.0)];
        assert_eq!(optimal_bias(&m), 0.0);
        // Brute-force grid over the convex objective agrees.
        let m = [(0.3, 1.0, 1.0), (0.9, -1.0, 2.0), (-0.4, -1.0, 1.0), (1.7, 1.0, 0.5), (0.1, 1.0, 1.0)];
        let loss = |b: f64| m.iter().map(|&(mm, y, c)| c * (1.0 - y * (mm + b)).max(0.0)).sum::<f64>();
        let best = optimal_bias(&m);
        for i in -400..400 {
            assert!(loss(best) <= loss(i as f64 / 100.0) + 1e-12);
        }
    }

    #[test]
    fn platt_separates_well_ordered_scores() {
        let scores = [-3.0, -2.0, -1.0, 1.0, 2.0, 3.0];
        let labels = [false, false, false, true, true, true];
        let (a, _) = platt_fit(&scores, &labels);
        assert!(a < 0.0);
    }

    #[test]
    fn gaussian_bayes_examples() {
        let m = GaussianBayesModel::fit(&[
            ("a".into(), vec![vec![0.0, 1.0], vec![0.2, 0.8]]),
            ("b".into(), vec![vec![1.0, 0.0], vec![0.8, 0.2]]),
        ])
        .unwrap();
        let at_a = m.gaussian_bayes_score(&[0.1, 0.9], "a").unwrap();
        assert!(at_a > m.gaussian_bayes_score(&[0.1, 0.9], "b").unwrap());
        assert!(at_a > m.gaussian_bayes_score(&[0.15, 0.9], "a").unwrap());
        // Per-dimension formula, written out.
        let x = [0.4, 0.3];
        let mut expected = 0.0;
        for j in 0..2 {
            let (mu, var) = (m.means[0][j], m.variances[0][j]);
            expected += -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (x[j] - mu).powi(2) / (2.0 * var);
        }
        assert!((m.gaussian_bayes_score(&x, "a").unwrap() - expected).abs() < 1e-9);
        assert!(matches!(m.gaussian_bayes_score(&x, "c"), Err(ClassifierError::UnknownClass(_))));
    }

    proptest! {
        #[test]
        fn probability_is_bounded_and_monotone(a in -5.0f64..5.0, b in -5.0f64..5.0, s1 in -50.0f64..50.0, s2 in -50.0f64..50.0) {
            let clf = LinearProbClassifier { weights: vec![], bias: 0.0, platt_a: a.abs(), platt_b: b };
            let (p1, p2) = (clf.prob_from_score(s1), clf.prob_from_score(s2));
            prop_assert!((0.0..=1.0).contains(&p1));
            if s1 <= s2 { prop_assert!(p1 <= p2); }
        }
    }
}
