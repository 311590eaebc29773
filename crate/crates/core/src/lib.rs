//! Early detection of activities in continuous feature streams using the
//! responses of weak onset-activity detectors as temporal context.
//!
//! The pipeline: frames are quantized against a k-means [`codebook`] into
//! words; [`onset`] templates turn word histograms into per-frame response
//! series; [`signature`] summarizes those series around the current frame;
//! [`detector`] combines word histograms and signatures in a bank of
//! calibrated linear classifiers with a duration prior.

pub mod baselines;
pub mod bundle;
pub mod classifier;
pub mod codebook;
pub mod config;
pub mod detector;
pub mod evaluation;
pub mod io;
pub mod onset;
pub mod signature;
pub mod synthgen;
pub mod timeline;
pub mod training;

#[cfg(any(test, feature = "oracles"))]
pub mod checks;
#[cfg(any(test, feature = "oracles"))]
pub mod oracle;

pub use classifier::{ClassifierBank, GaussianBayesModel, LinearProbClassifier, Sample, SgdConfig};
pub use codebook::{Codebook, IntegralHistogram, Word};
pub use config::RunConfig;
pub use detector::{Detection, DetectorModel, FeatureLayout, OnlineDetector, StreamState};
pub use evaluation::{CvReport, Method, PrCurve, RatioTable};
pub use onset::{OnsetSignatureSet, OnsetTemplate};
pub use signature::{CascadeConfig, OnsetRepresentation, SignatureVector};
pub use timeline::{ActivityInstance, ActivityKind, ClassTable, Dataset, FeatureStream, Interval};

use thiserror::Error;

/// Any error raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Timeline(#[from] timeline::TimelineError),
    #[error(transparent)]
    Codebook(#[from] codebook::CodebookError),
    #[error(transparent)]
    Onset(#[from] onset::OnsetError),
    #[error(transparent)]
    Signature(#[from] signature::SignatureError),
    #[error(transparent)]
    Classifier(#[from] classifier::ClassifierError),
    #[error(transparent)]
    Detector(#[from] detector::DetectorError),
    #[error(transparent)]
    Training(#[from] training::TrainingError),
    #[error(transparent)]
    Eval(#[from] evaluation::EvalError),
    #[error(transparent)]
    Synth(#[from] synthgen::SynthError),
    #[error(transparent)]
    Io(#[from] io::IoError),
    #[error(transparent)]
    Bundle(#[from] bundle::BundleError),
}

/// Mixes `parts` into `base` to give independent, reproducible sub-seeds.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut h = base ^ 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h = splitmix(h ^ splitmix(p));
    }
    splitmix(h)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
