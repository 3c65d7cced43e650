//! Fits the resources each scorer needs (heads, temperature, ODIN ε,
//! Mahalanobis model, ensemble) and runs detection evaluations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DatasetBundle;
use crate::error::{Error, Result};
use crate::head::{fit_temperature, train_head, CosineHead, Head, HeadKind, LinearHead, TrainConfig};
use crate::math::{derive_seed, mean, std_dev};
use crate::metrics::auroc;
use crate::scorers::{
    default_fgsm_epsilon, fit_maha_weights_adv, fit_mahalanobis_with, score_dataset, tune_odin_epsilon, EnsembleMode,
    MahaModel, OdinConfig, Scorer, ScorerKind, DEFAULT_EPSILON_GRID, DEFAULT_RIDGE_SCALE, MC_DROPOUT_RATE,
    MC_DROPOUT_SAMPLES,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Head training settings; the seed is replaced per head.
    pub train: TrainConfig,
    pub ensemble_size: usize,
    pub mc_samples: usize,
    pub mc_rate: f64,
    pub odin_grid: Vec<f64>,
    pub ridge_scale: f64,
    /// FGSM size for maha-adv; a tenth of the mean ID train norm when unset.
    pub fgsm_epsilon: Option<f64>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            train: TrainConfig::default(),
            ensemble_size: 5,
            mc_samples: MC_DROPOUT_SAMPLES,
            mc_rate: MC_DROPOUT_RATE,
            odin_grid: DEFAULT_EPSILON_GRID.to_vec(),
            ridge_scale: DEFAULT_RIDGE_SCALE,
            fgsm_epsilon: None,
            seed: 0,
        }
    }
}

/// Lazily trains and caches the resources shared between scorers, so that
/// e.g. baseline, calib and odin-star reuse one linear head.
pub struct ScorerBuilder<'a> {
    train: &'a DatasetBundle,
    val: &'a DatasetBundle,
    cfg: PipelineConfig,
    linear: Option<Head>,
    mc: Option<LinearHead>,
    cosine: Option<CosineHead>,
    ensemble: Option<Vec<Head>>,
    maha: Option<MahaModel>,
}

impl<'a> ScorerBuilder<'a> {
    pub fn new(train: &'a DatasetBundle, val: &'a DatasetBundle, cfg: PipelineConfig) -> Self {
        ScorerBuilder {
            train,
            val,
            cfg,
            linear: None,
            mc: None,
            cosine: None,
            ensemble: None,
            maha: None,
        }
    }

    /// Uses a pre-trained head instead of training one of that kind.
    pub fn with_head(mut self, head: Head) -> Self {
        match head {
            Head::Linear(_) => self.linear = Some(head),
            Head::Cosine(c) => self.cosine = Some(c),
        }
        self
    }

    fn train_one(&self, kind: HeadKind, stream: u64, dropout: f64) -> Result<Head> {
        let cfg = TrainConfig {
            seed: derive_seed(self.cfg.seed, stream),
            dropout,
            ..self.cfg.train.clone()
        };
        let trained = train_head(self.train, self.val, kind, &cfg)?;
        log::debug!(
            "trained {kind:?} head (stream {stream}), val accuracy {:.4}",
            trained.val_accuracy
        );
        Ok(trained.head)
    }

    pub fn linear_head(&mut self) -> Result<&Head> {
        if self.linear.is_none() {
            self.linear = Some(self.train_one(HeadKind::Linear, 1, 0.0)?);
        }
        Ok(self.linear.as_ref().expect("set above"))
    }

    fn mc_head(&mut self) -> Result<LinearHead> {
        if self.mc.is_none() {
            let h = self.train_one(HeadKind::Linear, 2, self.cfg.mc_rate)?;
            self.mc = h.as_linear().cloned();
        }
        Ok(self.mc.clone().expect("set above"))
    }

    pub fn cosine_head(&mut self) -> Result<&CosineHead> {
        if self.cosine.is_none() {
            let h = self.train_one(HeadKind::Cosine, 3, 0.0)?;
            self.cosine = h.as_cosine().cloned();
        }
        Ok(self.cosine.as_ref().expect("set above"))
    }

    fn ensemble(&mut self) -> Result<Vec<Head>> {
        if self.ensemble.is_none() {
            if self.cfg.ensemble_size < 2 {
                return Err(Error::precondition("an ensemble needs at least 2 members"));
            }
            let this = &*self;
            let members = (0..self.cfg.ensemble_size)
                .into_par_iter()
                .map(|k| this.train_one(HeadKind::Linear, 100 + k as u64, 0.0))
                .collect::<Result<Vec<_>>>()?;
            self.ensemble = Some(members);
        }
        Ok(self.ensemble.clone().expect("set above"))
    }

    fn maha(&mut self) -> Result<MahaModel> {
        if self.maha.is_none() {
            let labels = self.train.labels()?;
            self.maha = Some(fit_mahalanobis_with(
                &[(&self.train.features, labels)],
                self.cfg.ridge_scale,
            )?);
        }
        Ok(self.maha.clone().expect("set above"))
    }

    pub fn build(&mut self, kind: ScorerKind) -> Result<Scorer> {
        Ok(match kind {
            ScorerKind::Baseline => Scorer::Baseline {
                head: self.linear_head()?.clone(),
            },
            ScorerKind::Calib => {
                let head = self.linear_head()?.clone();
                let temperature = fit_temperature(&head, self.val)?;
                Scorer::Calibrated { head, temperature }
            }
            ScorerKind::McDropout => Scorer::McDropout {
                head: self.mc_head()?,
                samples: self.cfg.mc_samples,
                rate: self.cfg.mc_rate,
                seed: derive_seed(self.cfg.seed, 4),
            },
            ScorerKind::Cosine => Scorer::Cosine {
                head: self.cosine_head()?.clone(),
            },
            ScorerKind::OdinStar => {
                let head = self.linear_head()?.clone();
                let epsilon = tune_odin_epsilon(&head, self.val, &self.cfg.odin_grid)?;
                Scorer::Odin {
                    head,
                    config: OdinConfig {
                        epsilon,
                        grid: self.cfg.odin_grid.clone(),
                        ..Default::default()
                    },
                }
            }
            ScorerKind::MahaSum => {
                let model = self.maha()?;
                let weights = model.weights().to_vec();
                Scorer::Mahalanobis {
                    model,
                    weights,
                    adversarial: false,
                }
            }
            ScorerKind::MahaAdv => {
                let model = self.maha()?;
                let head = self.linear_head()?.clone();
                let eps = self
                    .cfg
                    .fgsm_epsilon
                    .unwrap_or_else(|| default_fgsm_epsilon(&self.train.features));
                let adv = fit_maha_weights_adv(&model, &head, &[&self.train.features], eps)?;
                Scorer::Mahalanobis {
                    model,
                    weights: adv.weights,
                    adversarial: true,
                }
            }
            ScorerKind::EnsembleConf => Scorer::Ensemble {
                heads: self.ensemble()?,
                mode: EnsembleMode::Conf,
            },
            ScorerKind::EnsembleEntropy => Scorer::Ensemble {
                heads: self.ensemble()?,
                mode: EnsembleMode::Entropy,
            },
        })
    }

    /// The network whose classification error a scorer's confidence
    /// describes: the cosine head for cosine, the dropout-trained head for
    /// MC dropout, and the standard linear head otherwise.
    pub fn classifier(&mut self, kind: ScorerKind) -> Result<Head> {
        Ok(match kind {
            ScorerKind::Cosine => Head::Cosine(self.cosine_head()?.clone()),
            ScorerKind::McDropout => Head::Linear(self.mc_head()?),
            _ => self.linear_head()?.clone(),
        })
    }

    pub fn build_all(&mut self, kinds: &[ScorerKind]) -> Result<Vec<Scorer>> {
        kinds.iter().map(|&k| self.build(k)).collect()
    }
}

/// AUROC of each scorer (outer) against each OOD set (inner).
pub fn detection_aurocs(scorers: &[Scorer], id: &DatasetBundle, oods: &[&DatasetBundle]) -> Result<Vec<Vec<f64>>> {
    scorers
        .iter()
        .map(|s| {
            let id_scores = score_dataset(s, id)?;
            oods.iter()
                .map(|o| auroc(id_scores.as_slice(), score_dataset(s, o)?.as_slice()))
                .collect()
        })
        .collect()
}

/// AUROCs of one (scorer, ID dataset, OOD dataset) cell across repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionCell {
    pub scorer: String,
    pub id: String,
    pub ood: String,
    pub aurocs: Vec<f64>,
}

impl DetectionCell {
    pub fn mean(&self) -> f64 {
        mean(&self.aurocs)
    }

    pub fn std(&self) -> f64 {
        std_dev(&self.aurocs)
    }
}

/// A named ID task: the splits a scorer is fitted and tested on.
#[derive(Debug, Clone, Copy)]
pub struct IdTask<'a> {
    pub name: &'a str,
    pub train: &'a DatasetBundle,
    pub val: &'a DatasetBundle,
    pub test: &'a DatasetBundle,
}

/// Fits the selected scorers `reps` times (seed `derive_seed(seed, rep)`) on
/// the task and computes AUROC of its test set against each named OOD set.
pub fn evaluate_detection(
    task: IdTask<'_>,
    oods: &[(&str, &DatasetBundle)],
    kinds: &[ScorerKind],
    reps: usize,
    cfg: &PipelineConfig,
) -> Result<Vec<DetectionCell>> {
    if reps == 0 {
        return Err(Error::precondition("at least one repetition is required"));
    }
    if kinds.is_empty() {
        return Err(Error::precondition("at least one scorer must be selected"));
    }
    let ood_sets: Vec<&DatasetBundle> = oods.iter().map(|(_, b)| *b).collect();
    let per_rep = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let rep_cfg = PipelineConfig {
                seed: derive_seed(cfg.seed, rep as u64),
                ..cfg.clone()
            };
            let scorers = ScorerBuilder::new(task.train, task.val, rep_cfg).build_all(kinds)?;
            detection_aurocs(&scorers, task.test, &ood_sets)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut cells = Vec::with_capacity(kinds.len() * oods.len());
    for (si, kind) in kinds.iter().enumerate() {
        for (oi, (name, _)) in oods.iter().enumerate() {
            cells.push(DetectionCell {
                scorer: kind.to_string(),
                id: task.name.to_string(),
                ood: name.to_string(),
                aurocs: per_rep.iter().map(|r| r[si][oi]).collect(),
            });
        }
    }
    Ok(cells)
}

/// Every ordered pair of distinct tasks: each task's test set serves as OOD
/// for every other task. Returns `tasks.len() · (tasks.len() − 1)` cells per
/// scorer.
pub fn evaluate_detection_grid(
    tasks: &[IdTask<'_>],
    kinds: &[ScorerKind],
    reps: usize,
    cfg: &PipelineConfig,
) -> Result<Vec<DetectionCell>> {
    if tasks.len() < 2 {
        return Err(Error::precondition("a detection grid needs at least 2 datasets"));
    }
    let mut cells = Vec::new();
    for (i, task) in tasks.iter().enumerate() {
        let oods: Vec<(&str, &DatasetBundle)> = tasks
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, t)| (t.name, t.test))
            .collect();
        cells.extend(evaluate_detection(*task, &oods, kinds, reps, cfg)?);
    }
    Ok(cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_classification_task, gen_ood, OodKind, TaskSpec};

    fn small_cfg() -> PipelineConfig {
        PipelineConfig {
            train: TrainConfig {
                epochs: 5,
                ..Default::default()
            },
            ensemble_size: 2,
            ..Default::default()
        }
    }

    fn spec(seed: u64) -> TaskSpec {
        TaskSpec {
            classes: 3,
            dim: 6,
            train_per_class: 60,
            val_per_class: 30,
            test_per_class: 40,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn builds_every_scorer_kind() {
        let t = gen_classification_task(&spec(1)).unwrap();
        let mut b = ScorerBuilder::new(&t.train, &t.val, small_cfg());
        let scorers = b.build_all(&ScorerKind::ALL).unwrap();
        for (s, k) in scorers.iter().zip(ScorerKind::ALL) {
            assert_eq!(s.kind(), k);
            assert_eq!(s.dim(), 6);
        }
    }

    #[test]
    fn supplied_head_is_reused() {
        let t = gen_classification_task(&spec(1)).unwrap();
        let head = Head::Linear(LinearHead::zeros(3, 6).unwrap());
        let mut b = ScorerBuilder::new(&t.train, &t.val, small_cfg()).with_head(head.clone());
        match b.build(ScorerKind::Baseline).unwrap() {
            Scorer::Baseline { head: h } => assert_eq!(h, head),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn detection_cells_shape_and_determinism() {
        let t = gen_classification_task(&spec(2)).unwrap();
        let o = gen_ood(&t, OodKind::Irrelevant, 60, 3).unwrap();
        let task = IdTask {
            name: "D1",
            train: &t.train,
            val: &t.val,
            test: &t.test,
        };
        let kinds = [ScorerKind::Baseline, ScorerKind::MahaSum];
        let a = evaluate_detection(task, &[("far", &o.bundle)], &kinds, 2, &small_cfg()).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a[0].aurocs.len(), 2);
        assert!(a[1].mean() > 0.95);
        assert_eq!(
            a,
            evaluate_detection(task, &[("far", &o.bundle)], &kinds, 2, &small_cfg()).unwrap()
        );
    }

    #[test]
    fn grid_has_n_times_n_minus_one_cells() {
        let ts: Vec<_> = (0..3)
            .map(|s| gen_classification_task(&spec(10 + s)).unwrap())
            .collect();
        let names = ["D1", "D2", "D3"];
        let tasks: Vec<IdTask> = ts
            .iter()
            .zip(names)
            .map(|(t, name)| IdTask {
                name,
                train: &t.train,
                val: &t.val,
                test: &t.test,
            })
            .collect();
        let cells = evaluate_detection_grid(&tasks, &[ScorerKind::Baseline], 1, &small_cfg()).unwrap();
        assert_eq!(cells.len(), 6);
        assert!(cells.iter().all(|c| c.id != c.ood));
    }
}
