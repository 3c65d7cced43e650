//! Domain-shift error prediction: dataset-level mean OOD scores, the
//! regressor from mean score to classification error, the family-split
//! evaluation protocol and a windowed stream monitor.

mod monitor;
mod protocol;
mod regressor;

pub use monitor::{monitor_stream, Monitor, MonitorConfig, MonitorRecord};
pub use protocol::{
    evaluate_shift_protocol, fit_error_predictor, ProtocolConfig, ProtocolResult, RepetitionResult, ScatterPoint,
};
pub use regressor::{train_regressor, Regressor, RegressorConfig};

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetBundle, FeatureMatrix, Provenance};
use crate::error::{Error, Result};
use crate::head::Head;
use crate::math::rng;
use crate::metrics::classification_error;
use crate::scorers::{pad_fit_and_score, score_dataset, Scorer};

/// One (mean OOD score, classification error) observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftPair {
    pub s_bar: f64,
    /// Classification error in percent.
    pub err_bar: f64,
    pub provenance: Option<Provenance>,
}

impl ShiftPair {
    pub fn new(s_bar: f64, err_bar: f64, provenance: Option<Provenance>) -> Self {
        ShiftPair {
            s_bar,
            err_bar,
            provenance,
        }
    }

    pub fn family(&self) -> Option<&str> {
        self.provenance
            .as_ref()
            .filter(|p| p.severity.is_some())
            .map(|p| p.family.as_str())
    }
}

/// Mean of the per-sample OOD scores (negated ID scores).
pub fn mean_ood_score(scorer: &Scorer, bundle: &DatasetBundle) -> Result<f64> {
    if bundle.is_empty() {
        return Err(Error::precondition("mean OOD score of an empty dataset"));
    }
    let scores = score_dataset(scorer, bundle)?;
    Ok(-scores.as_slice().iter().sum::<f64>() / scores.len() as f64)
}

/// Reference data for the PAD dataset score.
#[derive(Debug, Clone, PartialEq)]
pub struct PadReference {
    pub source: FeatureMatrix,
    pub split: f64,
    pub seed: u64,
}

/// Produces one number per dataset: the mean OOD score of a per-sample
/// scorer, or the PAD score `1 − MAE` against a source set.
#[derive(Debug, Clone)]
pub enum DatasetScorer {
    Mean(Scorer),
    Pad(PadReference),
}

impl DatasetScorer {
    pub fn name(&self) -> &'static str {
        match self {
            DatasetScorer::Mean(s) => s.kind().as_str(),
            DatasetScorer::Pad(_) => "pad",
        }
    }

    /// Feature dimension the scorer expects.
    pub fn dim(&self) -> usize {
        match self {
            DatasetScorer::Mean(s) => s.dim(),
            DatasetScorer::Pad(r) => r.source.d(),
        }
    }

    pub fn dataset_score(&self, bundle: &DatasetBundle) -> Result<f64> {
        match self {
            DatasetScorer::Mean(s) => mean_ood_score(s, bundle),
            DatasetScorer::Pad(r) => {
                if bundle.is_empty() {
                    return Err(Error::precondition("PAD score of an empty dataset"));
                }
                Ok(pad_fit_and_score(&r.source, &bundle.features, r.split, r.seed)?.score)
            }
        }
    }
}

/// One pair per labeled bundle, in input order.
pub fn build_training_pairs(head: &Head, scorer: &DatasetScorer, bundles: &[&DatasetBundle]) -> Result<Vec<ShiftPair>> {
    bundles
        .par_iter()
        .map(|b| {
            b.labels()?;
            if b.is_empty() {
                return Err(Error::precondition(format!("dataset {} is empty", b.name())));
            }
            Ok(ShiftPair::new(
                scorer.dataset_score(b)?,
                classification_error(head, b)?,
                b.provenance.clone(),
            ))
        })
        .collect()
}

/// Splits pairs into training and validation sets by shift family. Pairs
/// without a family (the source set) always train. With 6 families and a
/// fraction of 1/3 this gives 20 training and 10 validation pairs.
pub fn split_pairs_by_family(pairs: &[ShiftPair], val_fraction: f64, seed: u64) -> (Vec<ShiftPair>, Vec<ShiftPair>) {
    let mut families: Vec<&str> = pairs
        .iter()
        .filter_map(ShiftPair::family)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    families.shuffle(&mut rng(seed));
    let k = if families.len() < 2 {
        0
    } else {
        ((families.len() as f64 * val_fraction).round() as usize).clamp(1, families.len() - 1)
    };
    let val_families: BTreeSet<&str> = families[..k].iter().copied().collect();
    pairs
        .iter()
        .cloned()
        .partition(|p| !p.family().is_some_and(|f| val_families.contains(f)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{LabelVector, Role};
    use crate::head::LinearHead;

    fn shifted(n: usize, family: &str, severity: u8) -> DatasetBundle {
        let f = FeatureMatrix::new(n, 2, (0..2 * n).map(|i| i as f32 * 0.1).collect()).unwrap();
        DatasetBundle::new(
            f,
            Some(LabelVector::new((0..n as u32).map(|i| i % 2).collect())),
            Role::Shifted,
            Some(Provenance::shifted(family, severity, 0)),
        )
        .unwrap()
    }

    fn head() -> Head {
        Head::Linear(LinearHead::new(2, 2, vec![1.0, -1.0, -1.0, 1.0], vec![0.0, 0.0]).unwrap())
    }

    #[test]
    fn mean_of_constant_scores() {
        let h = Head::Linear(LinearHead::zeros(4, 2).unwrap());
        let b = shifted(7, "a", 1);
        let s = mean_ood_score(&Scorer::Baseline { head: h }, &b).unwrap();
        assert_eq!(s, -0.25);
    }

    #[test]
    fn single_sample_is_its_negated_score() {
        let b = shifted(1, "a", 1);
        let scorer = Scorer::Baseline { head: head() };
        let one = score_dataset(&scorer, &b).unwrap().as_slice()[0];
        assert_eq!(mean_ood_score(&scorer, &b).unwrap(), -one);
    }

    #[test]
    fn empty_bundle_is_rejected() {
        let b = shifted(0, "a", 1);
        assert!(mean_ood_score(&Scorer::Baseline { head: head() }, &b).is_err());
        let s = DatasetScorer::Mean(Scorer::Baseline { head: head() });
        assert!(build_training_pairs(&head(), &s, &[&b]).is_err());
    }

    #[test]
    fn thirty_shifted_plus_source_give_31_pairs() {
        let source = DatasetBundle::labeled(
            FeatureMatrix::new(4, 2, vec![1.0, 0.0, 0.0, 1.0, 2.0, 0.0, 0.0, 2.0]).unwrap(),
            LabelVector::new(vec![0, 1, 0, 1]),
            Role::IdTest,
        )
        .unwrap();
        let mut bundles = vec![source];
        for f in 0..6 {
            for s in 1..=5 {
                bundles.push(shifted(10, &format!("fam{f}"), s));
            }
        }
        let refs: Vec<&DatasetBundle> = bundles.iter().collect();
        let scorer = DatasetScorer::Mean(Scorer::Baseline { head: head() });
        let pairs = build_training_pairs(&head(), &scorer, &refs).unwrap();
        assert_eq!(pairs.len(), 31);
        assert_eq!(pairs[0].err_bar, 0.0);
        assert_eq!(pairs[30].provenance, Some(Provenance::shifted("fam5", 5, 0)));

        let (train, val) = split_pairs_by_family(&pairs, 1.0 / 3.0, 4);
        assert_eq!(train.len(), 21);
        assert_eq!(val.len(), 10);
        assert!(train.iter().any(|p| p.provenance.is_none()));
    }

    #[test]
    fn unlabeled_bundle_is_rejected() {
        let b = DatasetBundle::new(FeatureMatrix::new(1, 2, vec![1.0, 1.0]).unwrap(), None, Role::Ood, None).unwrap();
        let s = DatasetScorer::Mean(Scorer::Baseline { head: head() });
        assert!(build_training_pairs(&head(), &s, &[&b]).is_err());
    }
}
