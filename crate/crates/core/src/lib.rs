//! Post-hoc out-of-distribution detection on feature vectors.
//!
//! The crate covers the whole pipeline: classification heads trained on
//! penultimate-layer features, a roster of ID scorers (max-softmax,
//! temperature-calibrated, MC dropout, scaled cosine, ODIN-style input
//! perturbation, Mahalanobis, ensembles), AUROC evaluation, and a
//! regression-based predictor of classification error under domain shift with
//! a streaming alert monitor. A synthetic scenario generator stands in for
//! real feature exports.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod head;
pub mod math;
pub mod metrics;
pub mod pipeline;
pub mod report;
pub mod scorers;
pub mod shift;
pub mod synth;

pub use data::{DatasetBundle, FeatureMatrix, LabelVector, Manifest, Provenance, Role, ScoreVector};
pub use error::{Error, Result};
pub use head::{CosineHead, Head, HeadKind, LinearHead, Temperature, TrainConfig};
pub use scorers::{Scorer, ScorerKind};
