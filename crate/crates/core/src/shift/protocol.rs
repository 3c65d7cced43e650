//! Family-split evaluation of the error regressor: shift families are split
//! into a training part (whose shifted copies of D_o, plus D_s, train `f`)
//! and a held-out part (whose shifted copies of D_t are predicted).

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    build_training_pairs, split_pairs_by_family, train_regressor, DatasetScorer, Regressor, RegressorConfig, ShiftPair,
};
use crate::data::DatasetBundle;
use crate::error::{Error, Result};
use crate::head::Head;
use crate::math::{derive_seed, mean, rng, std_dev};
use crate::metrics::{regression_errors, RegressionErrors};
use crate::synth::{apply_shift, ShiftFamily, SEVERITIES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    /// Families whose shifted D_o copies train the regressor; the rest are held out.
    pub train_families: usize,
    pub repetitions: usize,
    /// Fraction of the training families used for early stopping.
    pub val_fraction: f64,
    pub seed: u64,
    pub regressor: RegressorConfig,
    /// Predict the D_t copies of the training families instead of the
    /// held-out ones. Used to measure the family generalization gap.
    pub same_families: bool,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            train_families: 6,
            repetitions: 20,
            val_fraction: 1.0 / 3.0,
            seed: 0,
            regressor: RegressorConfig::default(),
            same_families: false,
        }
    }
}

/// One point of the mean-score vs error scatter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub dataset: String,
    /// `source`, `d_o` or `d_t`.
    pub role: String,
    pub s_bar: f64,
    pub true_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionResult {
    pub train_families: Vec<String>,
    pub test_families: Vec<String>,
    pub train_pairs: usize,
    pub val_pairs: usize,
    pub test_datasets: usize,
    pub errors: RegressionErrors,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolResult {
    pub scorer: String,
    pub repetitions: Vec<RepetitionResult>,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub scatter: Vec<ScatterPoint>,
}

fn shifted_pairs(
    head: &Head,
    scorer: &DatasetScorer,
    base: &DatasetBundle,
    families: &[ShiftFamily],
    seed: u64,
) -> Result<Vec<[ShiftPair; SEVERITIES]>> {
    families
        .par_iter()
        .map(|f| {
            let pairs = (1..=SEVERITIES as u8)
                .map(|s| {
                    let b = apply_shift(base, f, s, derive_seed(seed, f.id as u64))?;
                    Ok(build_training_pairs(head, scorer, &[&b])?.remove(0))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(pairs.try_into().expect("five severities"))
        })
        .collect()
}

fn scatter_point(p: &ShiftPair, role: &str) -> ScatterPoint {
    let dataset = match &p.provenance {
        Some(pr) => match pr.severity {
            Some(s) => format!("{}@{s}", pr.family),
            None => pr.family.clone(),
        },
        None => "source".to_string(),
    };
    ScatterPoint {
        dataset,
        role: role.to_string(),
        s_bar: p.s_bar,
        true_error: p.err_bar,
    }
}

/// Runs `cfg.repetitions` random family splits. `d_s` is the unshifted
/// source set; `d_o_base` and `d_t_base` are the clean sets the families are
/// applied to for training and testing respectively.
pub fn evaluate_shift_protocol(
    head: &Head,
    scorer: &DatasetScorer,
    d_s: &DatasetBundle,
    d_o_base: &DatasetBundle,
    d_t_base: &DatasetBundle,
    families: &[ShiftFamily],
    cfg: &ProtocolConfig,
) -> Result<ProtocolResult> {
    if cfg.train_families == 0 || families.len() <= cfg.train_families || families.len() < 7 {
        return Err(Error::precondition(format!(
            "protocol needs at least 7 families and more than {} of them, got {}",
            cfg.train_families,
            families.len()
        )));
    }
    if cfg.repetitions == 0 {
        return Err(Error::precondition("protocol needs at least one repetition"));
    }
    let source = build_training_pairs(head, scorer, &[d_s])?.remove(0);
    let o_pairs = shifted_pairs(head, scorer, d_o_base, families, derive_seed(cfg.seed, 0x6f))?;
    let t_pairs = shifted_pairs(head, scorer, d_t_base, families, derive_seed(cfg.seed, 0x74))?;

    let repetitions = (0..cfg.repetitions)
        .into_par_iter()
        .map(|rep| {
            let mut order: Vec<usize> = (0..families.len()).collect();
            order.shuffle(&mut rng(derive_seed(cfg.seed, 0x7370_6c69_7400 + rep as u64)));
            let (train_idx, test_idx) = order.split_at(cfg.train_families);
            let test_idx = if cfg.same_families { train_idx } else { test_idx };

            let mut pairs = vec![source.clone()];
            pairs.extend(train_idx.iter().flat_map(|&i| o_pairs[i].iter().cloned()));
            let (train, val) = split_pairs_by_family(
                &pairs,
                cfg.val_fraction,
                derive_seed(cfg.seed, 0x7661_6c00 + rep as u64),
            );
            let reg_cfg = RegressorConfig {
                seed: derive_seed(cfg.regressor.seed, rep as u64),
                ..cfg.regressor.clone()
            };
            let f = train_regressor(&train, &val, &reg_cfg)?;

            let test: Vec<&ShiftPair> = test_idx.iter().flat_map(|&i| t_pairs[i].iter()).collect();
            let predicted = test
                .iter()
                .map(|p| f.predict_error(p.s_bar))
                .collect::<Result<Vec<_>>>()?;
            let truth: Vec<f64> = test.iter().map(|p| p.err_bar).collect();
            Ok(RepetitionResult {
                train_families: train_idx.iter().map(|&i| families[i].name.clone()).collect(),
                test_families: test_idx.iter().map(|&i| families[i].name.clone()).collect(),
                train_pairs: train.len(),
                val_pairs: val.len(),
                test_datasets: test.len(),
                errors: regression_errors(&predicted, &truth)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let maes: Vec<f64> = repetitions.iter().map(|r| r.errors.mae).collect();
    let rmses: Vec<f64> = repetitions.iter().map(|r| r.errors.rmse).collect();
    let mut scatter = vec![scatter_point(&source, "source")];
    scatter.extend(o_pairs.iter().flatten().map(|p| scatter_point(p, "d_o")));
    scatter.extend(t_pairs.iter().flatten().map(|p| scatter_point(p, "d_t")));
    Ok(ProtocolResult {
        scorer: scorer.name().to_string(),
        mae_mean: mean(&maes),
        mae_std: std_dev(&maes),
        rmse_mean: mean(&rmses),
        rmse_std: std_dev(&rmses),
        repetitions,
        scatter,
    })
}

/// Trains the deployable regressor on `d_s` plus the shifted copies of
/// `d_o_base` under every family, holding out whole families for early
/// stopping as in the protocol.
pub fn fit_error_predictor(
    head: &Head,
    scorer: &DatasetScorer,
    d_s: &DatasetBundle,
    d_o_base: &DatasetBundle,
    families: &[ShiftFamily],
    cfg: &ProtocolConfig,
) -> Result<Regressor> {
    let mut pairs = build_training_pairs(head, scorer, &[d_s])?;
    for fam in shifted_pairs(head, scorer, d_o_base, families, derive_seed(cfg.seed, 0x6f))? {
        pairs.extend(fam);
    }
    let (train, val) = split_pairs_by_family(&pairs, cfg.val_fraction, derive_seed(cfg.seed, 0x7661_6c00));
    train_regressor(&train, &val, &cfg.regressor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::head::{train_head, HeadKind, TrainConfig};
    use crate::scorers::Scorer;
    use crate::synth::{gen_classification_task, TaskSpec};

    fn fixture() -> (Head, DatasetBundle, Vec<ShiftFamily>) {
        let spec = TaskSpec {
            spread: 3.0,
            train_per_class: 100,
            val_per_class: 20,
            test_per_class: 120,
            seed: 5,
            ..Default::default()
        };
        let t = gen_classification_task(&spec).unwrap();
        let head = train_head(&t.train, &t.val, HeadKind::Linear, &TrainConfig::default())
            .unwrap()
            .head;
        let families = ShiftFamily::standard_set(spec.spread, spec.dim, 5).unwrap();
        (head, t.test, families)
    }

    fn quick(cfg: ProtocolConfig) -> ProtocolConfig {
        ProtocolConfig {
            regressor: RegressorConfig {
                max_iter: 400,
                patience: 100,
                ..RegressorConfig::default()
            },
            ..cfg
        }
    }

    #[test]
    fn shapes_and_reproducibility() {
        let (head, test, families) = fixture();
        let scorer = DatasetScorer::Mean(Scorer::Baseline { head: head.clone() });
        let cfg = quick(ProtocolConfig {
            repetitions: 1,
            ..ProtocolConfig::default()
        });
        let a = evaluate_shift_protocol(&head, &scorer, &test, &test, &test, &families, &cfg).unwrap();
        let b = evaluate_shift_protocol(&head, &scorer, &test, &test, &test, &families, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.mae_std, 0.0);
        let rep = &a.repetitions[0];
        assert_eq!(rep.test_datasets, 65);
        assert_eq!(rep.train_pairs + rep.val_pairs, 31);
        assert_eq!(rep.val_pairs, 10);
        assert!(rep.errors.rmse >= rep.errors.mae);
        assert_eq!(a.scatter.len(), 1 + 2 * 19 * 5);
    }

    #[test]
    fn rejects_too_few_families() {
        let (head, test, families) = fixture();
        let scorer = DatasetScorer::Mean(Scorer::Baseline { head: head.clone() });
        let cfg = ProtocolConfig::default();
        assert!(evaluate_shift_protocol(&head, &scorer, &test, &test, &test, &families[..6], &cfg).is_err());
        let cfg = ProtocolConfig { repetitions: 0, ..cfg };
        assert!(evaluate_shift_protocol(&head, &scorer, &test, &test, &test, &families, &cfg).is_err());
    }
}
