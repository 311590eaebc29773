//! Bag-of-words vocabulary and integral histograms.
//!
//! Frames are quantized to their nearest codebook center; an
//! [`IntegralHistogram`] over the resulting word sequence answers any interval
//! histogram query with one subtraction per word.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timeline::{FeatureStream, Interval};

pub type Word = u32;

pub const DEFAULT_VOCABULARY: usize = 64;
pub const KMEANS_MAX_ITER: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum CodebookError {
    #[error("vocabulary size must be at least 2, got {0}")]
    VocabularyTooSmall(usize),
    #[error("need {needed} distinct frames for the vocabulary, found {found} (short by {})", needed - found)]
    TooFewDistinct { needed: usize, found: usize },
    #[error("frame dimension {got} does not match codebook dimension {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("interval {iv} outside histogram of {len} frames")]
    OutOfRange { iv: Interval, len: usize },
    #[error("word {word} outside vocabulary of {vocabulary}")]
    UnknownWord { word: Word, vocabulary: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub centers: Vec<Vec<f64>>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl Codebook {
    pub fn vocabulary(&self) -> usize {
        self.centers.len()
    }

    pub fn dim(&self) -> usize {
        self.centers.first().map_or(0, Vec::len)
    }

    /// Nearest center by Euclidean distance; ties go to the lowest index.
    pub fn nearest(&self, x: &[f64]) -> Word {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, c) in self.centers.iter().enumerate() {
            let d = sq_dist(x, c);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best as Word
    }

    pub fn quantize_frame(&self, x: &[f64]) -> Result<Word, CodebookError> {
        if x.len() != self.dim() {
            return Err(CodebookError::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(self.nearest(x))
    }
}

/// Lloyd's k-means with k-means++ seeding. Deterministic for a given seed.
pub fn fit_codebook(frames: &[&[f64]], vocabulary: usize, seed: u64) -> Result<Codebook, CodebookError> {
    fit_codebook_with(frames, vocabulary, seed, KMEANS_MAX_ITER)
}

pub fn fit_codebook_with(
    frames: &[&[f64]],
    vocabulary: usize,
    seed: u64,
    max_iter: usize,
) -> Result<Codebook, CodebookError> {
    if vocabulary < 2 {
        return Err(CodebookError::VocabularyTooSmall(vocabulary));
    }
    let dim = frames.first().map_or(0, |f| f.len());
    if let Some(bad) = frames.iter().find(|f| f.len() != dim) {
        return Err(CodebookError::Dimension {
            expected: dim,
            got: bad.len(),
        });
    }
    let distinct: HashSet<Vec<u64>> = frames
        .iter()
        .map(|f| f.iter().map(|v| v.to_bits()).collect())
        .collect();
    if distinct.len() < vocabulary {
        return Err(CodebookError::TooFewDistinct {
            needed: vocabulary,
            found: distinct.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = seed_plus_plus(frames, vocabulary, &mut rng);
    let cb_assign = |centers: &[Vec<f64>], x: &[f64]| -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, c) in centers.iter().enumerate() {
            let d = sq_dist(x, c);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    };

    let mut assignment = vec![usize::MAX; frames.len()];
    for _ in 0..max_iter {
        let mut changed = false;
        let mut dists = vec![0.0; frames.len()];
        for (i, x) in frames.iter().enumerate() {
            let (c, d) = cb_assign(&centers, x);
            dists[i] = d;
            if assignment[i] != c {
                assignment[i] = c;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; vocabulary];
        let mut counts = vec![0usize; vocabulary];
        for (x, &c) in frames.iter().zip(&assignment) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(x.iter()) {
                *s += v;
            }
        }
        let mut taken = HashSet::new();
        for c in 0..vocabulary {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            } else {
                // Empty cluster: move it onto the worst-fit frame.
                let far = (0..frames.len())
                    .filter(|i| !taken.contains(i))
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .unwrap_or(0);
                taken.insert(far);
                dists[far] = 0.0;
                centers[c] = frames[far].to_vec();
                assignment[far] = usize::MAX;
            }
        }
    }
    Ok(Codebook { centers })
}

fn seed_plus_plus(frames: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let first = rng.random_range(0..frames.len());
    let mut centers = vec![frames[first].to_vec()];
    let mut d2: Vec<f64> = frames.iter().map(|x| sq_dist(x, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let mut pick = frames.len() - 1;
        let mut target = rng.random::<f64>() * total;
        for (i, &d) in d2.iter().enumerate() {
            if d <= 0.0 {
                continue;
            }
            if target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        // Rounding can leave `pick` on an already chosen point.
        if d2[pick] <= 0.0 {
            pick = (0..frames.len())
                .max_by(|&a, &b| d2[a].total_cmp(&d2[b]).then(b.cmp(&a)))
                .unwrap();
        }
        let c = frames[pick].to_vec();
        for (d, x) in d2.iter_mut().zip(frames) {
            *d = d.min(sq_dist(x, &c));
        }
        centers.push(c);
    }
    centers
}

/// Maps every frame to its nearest codebook word.
pub fn quantize(stream: &FeatureStream, cb: &Codebook) -> Result<Vec<Word>, CodebookError> {
    if stream.n_feat() != cb.dim() {
        return Err(CodebookError::Dimension {
            expected: cb.dim(),
            got: stream.n_feat(),
        });
    }
    Ok(stream.frames().map(|x| cb.nearest(x)).collect())
}

/// Cumulative word counts: row `t` holds the counts of frames `0..t`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegralHistogram {
    vocabulary: usize,
    cumulative: Vec<u32>,
}

impl IntegralHistogram {
    pub fn new(vocabulary: usize) -> Self {
        Self {
            vocabulary,
            cumulative: vec![0; vocabulary],
        }
    }

    pub fn from_words(words: &[Word], vocabulary: usize) -> Result<Self, CodebookError> {
        let mut ih = Self::new(vocabulary);
        ih.cumulative.reserve(words.len() * vocabulary);
        for &w in words {
            ih.push(w)?;
        }
        Ok(ih)
    }

    /// Appends one frame's word.
    pub fn push(&mut self, word: Word) -> Result<(), CodebookError> {
        if word as usize >= self.vocabulary {
            return Err(CodebookError::UnknownWord {
                word,
                vocabulary: self.vocabulary,
            });
        }
        let start = self.cumulative.len() - self.vocabulary;
        self.cumulative.extend_from_within(start..);
        let last = self.cumulative.len() - self.vocabulary;
        self.cumulative[last + word as usize] += 1;
        Ok(())
    }

    /// Number of frames.
    pub fn len(&self) -> usize {
        self.cumulative.len() / self.vocabulary - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn vocabulary(&self) -> usize {
        self.vocabulary
    }

    /// Row `t` of the cumulative table (counts over frames `0..t`).
    pub fn cumulative(&self, t: usize) -> &[u32] {
        &self.cumulative[t * self.vocabulary..(t + 1) * self.vocabulary]
    }

    /// The word emitted at frame `t`.
    pub fn word_at(&self, t: usize) -> Word {
        let (a, b) = (self.cumulative(t), self.cumulative(t + 1));
        a.iter().zip(b).position(|(x, y)| x != y).unwrap() as Word
    }

    fn check(&self, iv: &Interval) -> Result<(), CodebookError> {
        if iv.t1 > iv.t2 || iv.t2 >= self.len() {
            return Err(CodebookError::OutOfRange {
                iv: *iv,
                len: self.len(),
            });
        }
        Ok(())
    }

    pub fn counts(&self, iv: &Interval) -> Result<Vec<u32>, CodebookError> {
        self.check(iv)?;
        let (lo, hi) = (self.cumulative(iv.t1), self.cumulative(iv.t2 + 1));
        Ok(hi.iter().zip(lo).map(|(h, l)| h - l).collect())
    }

    /// Writes the L1-normalized histogram of `[t1, t2]` into `out`. The caller
    /// guarantees `t1 <= t2 < len`.
    pub(crate) fn fill_normalized(&self, t1: usize, t2: usize, out: &mut [f64]) {
        let (lo, hi) = (self.cumulative(t1), self.cumulative(t2 + 1));
        // Divide rather than multiply by the reciprocal: equal proportions
        // from different interval lengths must give identical values, or a
        // flat response series picks up spurious one-ulp gradients.
        let n = (t2 - t1 + 1) as f64;
        for ((o, h), l) in out.iter_mut().zip(hi).zip(lo) {
            *o = (h - l) as f64 / n;
        }
    }
}

/// Word histogram of `iv`; L1-normalized when `normalize` is set. Every frame
/// carries one word, so a normalized histogram always sums to one.
pub fn interval_histogram(ih: &IntegralHistogram, iv: &Interval, normalize: bool) -> Result<Vec<f64>, CodebookError> {
    ih.check(iv)?;
    let mut out = vec![0.0; ih.vocabulary];
    if normalize {
        ih.fill_normalized(iv.t1, iv.t2, &mut out);
    } else {
        let (lo, hi) = (ih.cumulative(iv.t1), ih.cumulative(iv.t2 + 1));
        for ((o, h), l) in out.iter_mut().zip(hi).zip(lo) {
            *o = (h - l) as f64;
        }
    }
    Ok(out)
}
