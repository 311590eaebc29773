//! Run configuration shared by training, detection and evaluation.

use serde::{Deserialize, Serialize};

use crate::classifier::{default_progress_levels, SgdConfig};
use crate::codebook::{DEFAULT_VOCABULARY, KMEANS_MAX_ITER};
use crate::detector::DurationRule;
use crate::onset::DEFAULT_N_DURATIONS;
use crate::signature::{CascadeConfig, OnsetRepresentation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Codebook size `W`.
    pub vocabulary: usize,
    pub codebook_seed: u64,
    /// Upper bound on frames fed to k-means; larger training sets are subsampled.
    pub codebook_sample: usize,
    pub kmeans_max_iter: usize,
    /// Number of onset template durations.
    pub n_durations: usize,
    pub cascade: CascadeConfig,
    pub representation: OnsetRepresentation,
    pub progress_levels: Vec<f64>,
    /// Negatives drawn per positive.
    pub neg_ratio: usize,
    /// Negatives may overlap a same-class instance by at most this IoU.
    pub neg_max_iou: f64,
    pub sampling_seed: u64,
    pub sgd: SgdConfig,
    /// Weight `w` of the log prior.
    pub prior_weight: f64,
    pub sigma_floor: f64,
    pub durations: DurationRule,
    /// NMS window as a fraction of the class mean duration.
    pub nms_fraction: f64,
    /// Observation ratios at which AP is reported.
    pub ratios: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            vocabulary: DEFAULT_VOCABULARY,
            codebook_seed: 1,
            codebook_sample: 6000,
            kmeans_max_iter: KMEANS_MAX_ITER,
            n_durations: DEFAULT_N_DURATIONS,
            cascade: CascadeConfig::default(),
            representation: OnsetRepresentation::HistogramPlusMeanMax,
            progress_levels: default_progress_levels(),
            neg_ratio: 5,
            neg_max_iou: 0.25,
            sampling_seed: 7,
            sgd: SgdConfig::default(),
            prior_weight: 1.0,
            sigma_floor: 2.0,
            durations: DurationRule::default(),
            nms_fraction: 0.5,
            ratios: default_progress_levels(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.vocabulary == 0 {
            return Err("vocabulary must be positive".into());
        }
        self.cascade.validate().map_err(|e| e.to_string())?;
        if self.progress_levels.is_empty() || self.progress_levels.iter().any(|&d| !(d > 0.0 && d <= 1.0)) {
            return Err("progress levels must lie in (0, 1]".into());
        }
        if self.ratios.iter().any(|&r| !(r > 0.0 && r <= 1.0)) {
            return Err("observation ratios must lie in (0, 1]".into());
        }
        if self.durations.sigma_offsets.is_empty() {
            return Err("at least one duration hypothesis is required".into());
        }
        if self.n_durations == 0 {
            return Err("n_durations must be positive".into());
        }
        if !(self.sgd.calibration_fraction > 0.0 && self.sgd.calibration_fraction < 1.0) {
            return Err("calibration_fraction must lie in (0, 1)".into());
        }
        if self.neg_ratio == 0 {
            return Err("neg_ratio must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_and_rejects_unknown_keys() {
        let cfg = RunConfig::default();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&json).unwrap(), cfg);
        assert!(serde_json::from_str::<RunConfig>(r#"{"vocabulary": 32, "bogus": 1}"#).is_err());
        let partial: RunConfig = serde_json::from_str(r#"{"vocabulary": 32, "sgd": {"lambda": 0.01}}"#).unwrap();
        assert_eq!(partial.vocabulary, 32);
        assert_eq!(partial.sgd.epochs, SgdConfig::default().epochs);
        assert_eq!(partial.cascade, CascadeConfig::default());
    }

    #[test]
    fn defaults_validate() {
        assert!(RunConfig::default().validate().is_ok());
        let bad = RunConfig {
            progress_levels: vec![0.0],
            ..RunConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
