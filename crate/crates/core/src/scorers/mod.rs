//! ID scorers. Every scorer maps a sample to a real number where larger means
//! more in-distribution; OOD scores are obtained by negation.

mod logistic;
mod mahalanobis;
mod odin;
mod pad;

pub use logistic::{fit_logistic, LogisticConfig, LogisticModel};
pub use mahalanobis::{
    default_fgsm_epsilon, fit_maha_weights_adv, fit_mahalanobis, fit_mahalanobis_with, score_mahalanobis, AdvWeights,
    MahaLayer, MahaModel, DEFAULT_RIDGE_SCALE,
};
pub use odin::{perturb, score_odin, tune_odin_epsilon, OdinConfig, DEFAULT_EPSILON_GRID};
pub use pad::{pad_fit_and_score, PadModel};

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetBundle, FeatureMatrix, ScoreVector};
use crate::error::{check_dim, Error, Result};
use crate::head::{CosineHead, Head, LinearHead, Temperature};
use crate::math::{max, rng};

/// The scoring methods available.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScorerKind {
    Baseline,
    Calib,
    McDropout,
    Cosine,
    OdinStar,
    MahaSum,
    MahaAdv,
    EnsembleConf,
    EnsembleEntropy,
}

impl ScorerKind {
    pub const ALL: [ScorerKind; 9] = [
        ScorerKind::Baseline,
        ScorerKind::Calib,
        ScorerKind::McDropout,
        ScorerKind::Cosine,
        ScorerKind::OdinStar,
        ScorerKind::MahaSum,
        ScorerKind::MahaAdv,
        ScorerKind::EnsembleConf,
        ScorerKind::EnsembleEntropy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScorerKind::Baseline => "baseline",
            ScorerKind::Calib => "calib",
            ScorerKind::McDropout => "mc-dropout",
            ScorerKind::Cosine => "cosine",
            ScorerKind::OdinStar => "odin-star",
            ScorerKind::MahaSum => "maha-sum",
            ScorerKind::MahaAdv => "maha-adv",
            ScorerKind::EnsembleConf => "ensemble-conf",
            ScorerKind::EnsembleEntropy => "ensemble-entropy",
        }
    }

    /// Parses a comma-separated scorer list such as `baseline,cosine,maha-sum`.
    pub fn parse_list(s: &str) -> Result<Vec<ScorerKind>> {
        let kinds = s
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<_>>>()?;
        if kinds.is_empty() {
            return Err(Error::precondition("at least one scorer must be selected"));
        }
        Ok(kinds)
    }
}

impl fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScorerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase();
        let alias = match s.as_str() {
            "odin" | "odin*" => "odin-star",
            "mc" | "mcdropout" => "mc-dropout",
            other => other,
        };
        ScorerKind::ALL
            .into_iter()
            .find(|k| k.as_str() == alias)
            .ok_or_else(|| Error::precondition(format!("unknown scorer {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnsembleMode {
    /// Max of the averaged probabilities.
    Conf,
    /// Negated entropy of the averaged probabilities.
    Entropy,
}

/// A scorer together with the fitted resources it needs.
#[derive(Debug, Clone)]
pub enum Scorer {
    Baseline {
        head: Head,
    },
    Calibrated {
        head: Head,
        temperature: Temperature,
    },
    McDropout {
        head: LinearHead,
        samples: usize,
        rate: f64,
        seed: u64,
    },
    Cosine {
        head: CosineHead,
    },
    Odin {
        head: Head,
        config: OdinConfig,
    },
    Mahalanobis {
        model: MahaModel,
        weights: Vec<f64>,
        adversarial: bool,
    },
    Ensemble {
        heads: Vec<Head>,
        mode: EnsembleMode,
    },
}

/// Dropout sample count and rate used by the MC-dropout scorer by default.
pub const MC_DROPOUT_SAMPLES: usize = 10;
pub const MC_DROPOUT_RATE: f64 = 0.5;

impl Scorer {
    pub fn kind(&self) -> ScorerKind {
        match self {
            Scorer::Baseline { .. } => ScorerKind::Baseline,
            Scorer::Calibrated { .. } => ScorerKind::Calib,
            Scorer::McDropout { .. } => ScorerKind::McDropout,
            Scorer::Cosine { .. } => ScorerKind::Cosine,
            Scorer::Odin { .. } => ScorerKind::OdinStar,
            Scorer::Mahalanobis { adversarial: false, .. } => ScorerKind::MahaSum,
            Scorer::Mahalanobis { adversarial: true, .. } => ScorerKind::MahaAdv,
            Scorer::Ensemble {
                mode: EnsembleMode::Conf,
                ..
            } => ScorerKind::EnsembleConf,
            Scorer::Ensemble {
                mode: EnsembleMode::Entropy,
                ..
            } => ScorerKind::EnsembleEntropy,
        }
    }

    /// Input dimension of the first (head-facing) layer.
    pub fn dim(&self) -> usize {
        match self {
            Scorer::Baseline { head } | Scorer::Calibrated { head, .. } | Scorer::Odin { head, .. } => head.dim(),
            Scorer::McDropout { head, .. } => head.dim(),
            Scorer::Cosine { head } => head.dim(),
            Scorer::Mahalanobis { model, .. } => model.layers()[0].dim(),
            Scorer::Ensemble { heads, .. } => heads[0].dim(),
        }
    }

    /// Number of feature layers a sample must supply.
    pub fn layer_count(&self) -> usize {
        match self {
            Scorer::Mahalanobis { model, .. } => model.layers().len(),
            _ => 1,
        }
    }

    /// Scores one sample. `layers[0]` is the penultimate feature vector;
    /// further layers are only read by the Mahalanobis scorer. `index` feeds
    /// the per-sample seed of stochastic scorers (`seed ⊕ index`).
    pub fn score(&self, layers: &[&[f64]], index: u64) -> Result<f64> {
        check_dim(self.layer_count(), layers.len())?;
        let x = layers[0];
        match self {
            Scorer::Baseline { head } => score_baseline(head, x),
            Scorer::Calibrated { head, temperature } => score_calibrated(head, x, *temperature),
            Scorer::McDropout {
                head,
                samples,
                rate,
                seed,
            } => score_mc_dropout(head, x, *samples, *rate, seed ^ index),
            Scorer::Cosine { head } => score_cosine(head, x),
            Scorer::Odin { head, config } => score_odin(head, x, config),
            Scorer::Mahalanobis { model, weights, .. } => score_mahalanobis(model, layers, weights),
            Scorer::Ensemble { heads, mode } => score_ensemble(heads, x, *mode),
        }
    }

    /// JSON description of the scorer's resources for score sidecars.
    pub fn describe(&self) -> serde_json::Value {
        use serde_json::json;
        match self {
            Scorer::Baseline { head } => json!({"head": head.kind(), "classes": head.classes(), "dim": head.dim()}),
            Scorer::Calibrated { head, temperature } => {
                json!({"head": head.kind(), "temperature": temperature.value()})
            }
            Scorer::McDropout {
                samples, rate, seed, ..
            } => json!({"head": "linear", "samples": samples, "rate": rate, "seed": seed}),
            Scorer::Cosine { head } => json!({"head": "cosine", "classes": head.classes()}),
            Scorer::Odin { config, .. } => {
                json!({"epsilon": config.epsilon, "temperature": config.temperature.value()})
            }
            Scorer::Mahalanobis { model, weights, .. } => {
                json!({"layers": model.layers().len(), "weights": weights})
            }
            Scorer::Ensemble { heads, mode } => json!({"members": heads.len(), "mode": mode}),
        }
    }

    /// Seeds consumed by the scorer, for sidecars.
    pub fn seeds(&self) -> Vec<u64> {
        match self {
            Scorer::McDropout { seed, .. } => vec![*seed],
            _ => Vec::new(),
        }
    }
}

fn max_softmax(head: &Head, x: &[f64], t: Temperature) -> Result<f64> {
    Ok(max(&head.forward(x, t)?))
}

/// Maximum softmax probability at `T = 1`.
pub fn score_baseline(head: &Head, x: &[f64]) -> Result<f64> {
    max_softmax(head, x, Temperature::ONE)
}

/// Maximum softmax probability at temperature `t`.
pub fn score_calibrated(head: &Head, x: &[f64], t: Temperature) -> Result<f64> {
    max_softmax(head, x, t)
}

/// Mean max-softmax over `samples` dropout draws at rate `rate`.
pub fn score_mc_dropout(head: &LinearHead, x: &[f64], samples: usize, rate: f64, seed: u64) -> Result<f64> {
    if samples == 0 {
        return Err(Error::precondition("MC dropout needs at least one sample"));
    }
    let mut r = rng(seed);
    // running mean: exact when every pass agrees, as at rate 0
    let mut m = 0.0;
    for k in 0..samples {
        let v = max(&head.dropout_forward_with(x, rate, &mut r)?);
        m += (v - m) / (k + 1) as f64;
    }
    Ok(m)
}

/// Largest cosine similarity to any class weight vector, ignoring the scale.
pub fn score_cosine(head: &CosineHead, x: &[f64]) -> Result<f64> {
    Ok(max(&head.cosine_similarities(x)?))
}

/// Averaged member probabilities at `T = 1`.
pub fn ensemble_probabilities(heads: &[Head], x: &[f64]) -> Result<Vec<f64>> {
    if heads.len() < 2 {
        return Err(Error::precondition("an ensemble needs at least 2 members"));
    }
    let kind = heads[0].kind();
    let classes = heads[0].classes();
    let mut mean = vec![0.0; classes];
    for h in heads {
        if h.kind() != kind {
            return Err(Error::precondition("ensemble members must share a head kind"));
        }
        check_dim(classes, h.classes())?;
        check_dim(heads[0].dim(), h.dim())?;
        for (m, p) in mean.iter_mut().zip(h.forward(x, Temperature::ONE)?) {
            *m += p;
        }
    }
    let n = heads.len() as f64;
    for m in &mut mean {
        *m /= n;
    }
    Ok(mean)
}

pub fn score_ensemble(heads: &[Head], x: &[f64], mode: EnsembleMode) -> Result<f64> {
    let p = ensemble_probabilities(heads, x)?;
    Ok(match mode {
        EnsembleMode::Conf => max(&p),
        EnsembleMode::Entropy => p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum(),
    })
}

/// Scores every row of a bundle in parallel; element `i` scores row `i`.
pub fn score_dataset(scorer: &Scorer, bundle: &DatasetBundle) -> Result<ScoreVector> {
    score_layers(scorer, &[&bundle.features], true)
}

/// Scores aligned per-layer feature matrices. With `parallel` the rows fan out
/// over the rayon pool; the result is identical either way.
pub fn score_layers(scorer: &Scorer, layers: &[&FeatureMatrix], parallel: bool) -> Result<ScoreVector> {
    check_dim(scorer.layer_count(), layers.len())?;
    check_dim(scorer.dim(), layers[0].d())?;
    let n = layers[0].n();
    if let Some(l) = layers.iter().find(|l| l.n() != n) {
        return Err(Error::Validation(format!(
            "layer row counts disagree ({} vs {n})",
            l.n()
        )));
    }
    let one = |i: usize| -> Result<f64> {
        let rows: Vec<Vec<f64>> = layers.iter().map(|l| l.row_f64(i)).collect();
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        scorer.score(&refs, i as u64)
    };
    let scores: Vec<f64> = if parallel {
        (0..n).into_par_iter().map(one).collect::<Result<_>>()?
    } else {
        (0..n).map(one).collect::<Result<_>>()?
    };
    ScoreVector::new(scores)
}
