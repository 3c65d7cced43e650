//! Synthetic feature-space scenarios: Gaussian class clusters for the ID
//! task, far clusters for irrelevant inputs, nearby clusters for novel
//! classes, and parameterized shift families for domain shift.
//!
//! Class means sit on a sphere of radius `(irrelevant_factor + 1) ·
//! separation` around the origin, and irrelevant clusters sit near the
//! origin. A head trained on such a task has near-equal logits at the origin,
//! so irrelevant inputs look like low-confidence, low-norm features.

mod families;

pub use families::{apply_shift, apply_shift_features, ShiftFamily, TransformKind, SEVERITIES};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DatasetBundle, FeatureMatrix, LabelVector, Provenance, Role};
use crate::error::{Error, Result};
use crate::math::{derive_seed, gaussian_vec, norm, rng};

const MAX_PACKING_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskSpec {
    pub classes: usize,
    pub dim: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    /// Minimum distance between any two class means.
    pub separation: f64,
    /// Isotropic within-class standard deviation.
    pub spread: f64,
    pub seed: u64,
    /// Irrelevant clusters lie at least this many separations from every ID mean.
    pub irrelevant_factor: f64,
    /// Novel clusters lie this many separations from their anchor class mean.
    pub novel_factor: f64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        TaskSpec {
            classes: 5,
            dim: 16,
            train_per_class: 200,
            val_per_class: 100,
            test_per_class: 400,
            separation: 1.0,
            spread: 1.0,
            seed: 0,
            irrelevant_factor: 10.0,
            novel_factor: 1.0,
        }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::precondition("a task needs at least 2 classes"));
        }
        if self.dim == 0 {
            return Err(Error::precondition("feature dimension must be at least 1"));
        }
        for (name, v) in [
            ("separation", self.separation),
            ("spread", self.spread),
            ("irrelevant factor", self.irrelevant_factor),
            ("novel factor", self.novel_factor),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::precondition(format!("{name} must be positive")));
            }
        }
        if self.train_per_class == 0 {
            return Err(Error::precondition("train_per_class must be at least 1"));
        }
        Ok(())
    }

    /// Radius of the sphere carrying the class means.
    pub fn shell_radius(&self) -> f64 {
        (self.irrelevant_factor + 1.0) * self.separation
    }
}

/// A generated ID task with its ground-truth class means.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub spec: TaskSpec,
    pub means: Vec<Vec<f64>>,
    pub train: DatasetBundle,
    pub val: DatasetBundle,
    pub test: DatasetBundle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OodKind {
    Irrelevant,
    Novel,
}

impl OodKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OodKind::Irrelevant => "irrelevant",
            OodKind::Novel => "novel",
        }
    }
}

impl fmt::Display for OodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "irrelevant" => Ok(OodKind::Irrelevant),
            "novel" => Ok(OodKind::Novel),
            other => Err(Error::precondition(format!("unknown OOD kind {other:?}"))),
        }
    }
}

/// OOD samples plus the cluster centers they were drawn around.
#[derive(Debug, Clone, PartialEq)]
pub struct OodSet {
    pub bundle: DatasetBundle,
    pub centers: Vec<Vec<f64>>,
}

fn random_direction<R: Rng>(r: &mut R, d: usize) -> Vec<f64> {
    loop {
        let v = gaussian_vec(r, d);
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn class_means(spec: &TaskSpec) -> Result<Vec<Vec<f64>>> {
    let mut r = rng(derive_seed(spec.seed, 1));
    let radius = spec.shell_radius();
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(spec.classes);
    for _ in 0..MAX_PACKING_ATTEMPTS {
        if means.len() == spec.classes {
            break;
        }
        let m: Vec<f64> = random_direction(&mut r, spec.dim)
            .into_iter()
            .map(|v| v * radius)
            .collect();
        if means.iter().all(|o| distance(o, &m) >= spec.separation) {
            means.push(m);
        }
    }
    if means.len() == spec.classes {
        return Ok(means);
    }
    Err(Error::precondition(format!(
        "cannot place {} class means {} apart in dimension {}",
        spec.classes, spec.separation, spec.dim
    )))
}

fn sample_clusters(centers: &[Vec<f64>], per_center: &[usize], spread: f64, seed: u64) -> (FeatureMatrix, Vec<u32>) {
    let d = centers[0].len();
    let total: usize = per_center.iter().sum();
    let mut r = rng(seed);
    let mut values = Vec::with_capacity(total * d);
    let mut labels = Vec::with_capacity(total);
    // Interleave clusters so that any prefix is roughly balanced.
    let mut remaining = per_center.to_vec();
    while labels.len() < total {
        for (c, left) in remaining.iter_mut().enumerate() {
            if *left == 0 {
                continue;
            }
            *left -= 1;
            for &mu in &centers[c] {
                values.push((mu + spread * r.sample::<f64, _>(rand_distr::StandardNormal)) as f32);
            }
            labels.push(c as u32);
        }
    }
    let features = FeatureMatrix::new(total, d, values).expect("finite Gaussian samples");
    (features, labels)
}

fn labeled_split(means: &[Vec<f64>], per_class: usize, spread: f64, seed: u64, role: Role) -> Result<DatasetBundle> {
    let (features, labels) = sample_clusters(means, &vec![per_class; means.len()], spread, seed);
    DatasetBundle::labeled(features, LabelVector::with_classes(labels, means.len())?, role)
}

/// Samples the ID train/val/test splits. Deterministic per `spec.seed`.
pub fn gen_classification_task(spec: &TaskSpec) -> Result<SyntheticTask> {
    spec.validate()?;
    let means = class_means(spec)?;
    let train = labeled_split(
        &means,
        spec.train_per_class,
        spec.spread,
        derive_seed(spec.seed, 2),
        Role::IdTrain,
    )?;
    let val = labeled_split(
        &means,
        spec.val_per_class,
        spec.spread,
        derive_seed(spec.seed, 3),
        Role::IdVal,
    )?;
    let test = labeled_split(
        &means,
        spec.test_per_class,
        spec.spread,
        derive_seed(spec.seed, 4),
        Role::IdTest,
    )?;
    Ok(SyntheticTask {
        spec: spec.clone(),
        means,
        train,
        val,
        test,
    })
}

/// Fresh labeled samples from the ID distribution, e.g. as an "OOD" set
/// that is in fact identically distributed.
pub fn sample_in_distribution(task: &SyntheticTask, n: usize, seed: u64, role: Role) -> Result<DatasetBundle> {
    let c = task.means.len();
    let per: Vec<usize> = (0..c).map(|i| n / c + usize::from(i < n % c)).collect();
    let (features, labels) = sample_clusters(&task.means, &per, task.spec.spread, derive_seed(seed, 5));
    DatasetBundle::new(
        features,
        Some(LabelVector::with_classes(labels, c)?),
        role,
        Some(Provenance::kind("in-distribution", seed)),
    )
}

/// Number of clusters an OOD set is drawn from.
pub const OOD_CLUSTERS: usize = 3;

/// Unlabeled OOD samples of the given kind around [`OOD_CLUSTERS`] centers.
///
/// Irrelevant centers lie within half a separation of the origin, hence at
/// least `irrelevant_factor · separation` from every class mean. Novel
/// centers are placed `novel_factor · separation` from a random anchor mean
/// and accepted only if their nearest class mean is within [0.5, 2]
/// separations.
pub fn gen_ood(task: &SyntheticTask, kind: OodKind, n: usize, seed: u64) -> Result<OodSet> {
    let spec = &task.spec;
    let mut r = rng(derive_seed(seed, 6));
    let sep = spec.separation;
    let mut centers = Vec::with_capacity(OOD_CLUSTERS);
    let mut attempts = 0;
    while centers.len() < OOD_CLUSTERS {
        attempts += 1;
        if attempts > MAX_PACKING_ATTEMPTS {
            return Err(Error::precondition(format!(
                "cannot place {kind} OOD clusters for this task"
            )));
        }
        let c: Vec<f64> = match kind {
            OodKind::Irrelevant => {
                let radius = 0.5 * sep * r.random::<f64>();
                random_direction(&mut r, spec.dim)
                    .into_iter()
                    .map(|x| x * radius)
                    .collect()
            }
            OodKind::Novel => {
                let anchor = &task.means[r.random_range(0..task.means.len())];
                let u = random_direction(&mut r, spec.dim);
                anchor
                    .iter()
                    .zip(&u)
                    .map(|(m, u)| m + spec.novel_factor * sep * u)
                    .collect()
            }
        };
        let nearest = task.means.iter().map(|m| distance(m, &c)).fold(f64::INFINITY, f64::min);
        let ok = match kind {
            OodKind::Irrelevant => nearest >= spec.irrelevant_factor * sep,
            OodKind::Novel => (0.5 * sep..=2.0 * sep).contains(&nearest),
        };
        if ok {
            centers.push(c);
        }
    }
    let per: Vec<usize> = (0..OOD_CLUSTERS)
        .map(|i| n / OOD_CLUSTERS + usize::from(i < n % OOD_CLUSTERS))
        .collect();
    let (features, _) = sample_clusters(&centers, &per, spec.spread, derive_seed(seed, 7));
    let bundle = DatasetBundle::new(features, None, Role::Ood, Some(Provenance::kind(kind.as_str(), seed)))?;
    Ok(OodSet { bundle, centers })
}
