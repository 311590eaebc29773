//! Versioned model files: a trained detector together with the configuration
//! and data it was trained from.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::RunConfig;
use crate::detector::DetectorModel;
use crate::io::{read_json, write_json, IoError};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("model format version {found} is not supported (expected {MODEL_FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("model is inconsistent: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProvenance {
    pub seed: u64,
    /// SHA-256 of the training data.
    pub dataset_hash: String,
    pub n_train_streams: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBundle {
    pub format_version: u32,
    pub config: RunConfig,
    pub provenance: ModelProvenance,
    pub model: DetectorModel,
}

#[derive(Deserialize)]
struct VersionProbe {
    format_version: u32,
}

impl ModelBundle {
    pub fn new(config: RunConfig, provenance: ModelProvenance, model: DetectorModel) -> Self {
        Self {
            format_version: MODEL_FORMAT_VERSION,
            config,
            provenance,
            model,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), BundleError> {
        Ok(write_json(path, self)?)
    }

    /// Loads a bundle, refusing files written with another format version.
    pub fn load(path: &Path) -> Result<Self, BundleError> {
        let probe: VersionProbe = read_json(path)?;
        if probe.format_version != MODEL_FORMAT_VERSION {
            return Err(BundleError::Version {
                found: probe.format_version,
            });
        }
        let bundle: ModelBundle = read_json(path)?;
        bundle
            .model
            .check()
            .map_err(|e| BundleError::Inconsistent(e.to_string()))?;
        Ok(bundle)
    }
}
