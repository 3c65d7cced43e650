//! Feature matrices, labels, dataset bundles and score vectors, plus their
//! on-disk formats.

mod format;
mod manifest;
mod scores;

pub use format::{
    read_feature_file, read_label_file, write_feature_file, write_label_file, FeatureReader, FEATURE_HEADER_LEN,
    FEATURE_MAGIC, FORMAT_VERSION, LABEL_HEADER_LEN, LABEL_MAGIC,
};
pub use manifest::{load_bundle, Manifest, ManifestEntry};
pub use scores::{ScoreSidecar, ScoreVector};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An `n × d` row-major matrix of finite `f32` feature values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n: usize,
    d: usize,
    values: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(n: usize, d: usize, values: Vec<f32>) -> Result<Self> {
        if d == 0 {
            return Err(Error::Validation("feature dimension must be at least 1".into()));
        }
        if values.len() != n * d {
            return Err(Error::Validation(format!(
                "expected {} values for a {n}x{d} matrix, got {}",
                n * d,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite value {} at row {}, column {}",
                values[i],
                i / d,
                i % d
            )));
        }
        Ok(FeatureMatrix { n, d, values })
    }

    pub fn empty(d: usize) -> Result<Self> {
        Self::new(0, d, Vec::new())
    }

    pub fn from_rows<R: AsRef<[f32]>>(d: usize, rows: &[R]) -> Result<Self> {
        let mut values = Vec::with_capacity(rows.len() * d);
        for row in rows {
            let row = row.as_ref();
            crate::error::check_dim(d, row.len())?;
            values.extend_from_slice(row);
        }
        Self::new(rows.len(), d, values)
    }

    /// Builds a matrix from `f64` rows, rounding each value to `f32`.
    pub fn from_f64_rows<R: AsRef<[f64]>>(d: usize, rows: &[R]) -> Result<Self> {
        let mut values = Vec::with_capacity(rows.len() * d);
        for row in rows {
            let row = row.as_ref();
            crate::error::check_dim(d, row.len())?;
            values.extend(row.iter().map(|&v| v as f32));
        }
        Self::new(rows.len(), d, values)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    /// Row `i` widened to `f64`.
    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        crate::math::to_f64(self.row(i))
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.values.chunks_exact(self.d).take(self.n)
    }

    /// New matrix holding the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> FeatureMatrix {
        let mut values = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            n: indices.len(),
            d: self.d,
            values,
        }
    }

    pub fn concat(&self, other: &FeatureMatrix) -> Result<FeatureMatrix> {
        crate::error::check_dim(self.d, other.d)?;
        let mut values = self.values.clone();
        values.extend_from_slice(&other.values);
        Ok(FeatureMatrix {
            n: self.n + other.n,
            d: self.d,
            values,
        })
    }

    pub fn mean_row_norm(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        self.rows()
            .map(|r| r.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt())
            .sum::<f64>()
            / self.n as f64
    }
}

/// Class indices paired with the rows of a [`FeatureMatrix`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    labels: Vec<u32>,
}

impl LabelVector {
    pub fn new(labels: Vec<u32>) -> Self {
        LabelVector { labels }
    }

    /// Builds a label vector, checking every index is below `classes`.
    pub fn with_classes(labels: Vec<u32>, classes: usize) -> Result<Self> {
        let v = LabelVector { labels };
        v.validate(classes)?;
        Ok(v)
    }

    pub fn validate(&self, classes: usize) -> Result<()> {
        match self.labels.iter().position(|&l| l as usize >= classes) {
            Some(i) => Err(Error::Validation(format!(
                "label {} at index {i} is out of range for {classes} classes",
                self.labels[i]
            ))),
            None => Ok(()),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.labels
    }

    pub fn get(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn select(&self, indices: &[usize]) -> LabelVector {
        LabelVector::new(indices.iter().map(|&i| self.labels[i]).collect())
    }

    /// Number of distinct label values present.
    pub fn distinct(&self) -> usize {
        let mut seen: Vec<u32> = self.labels.clone();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }

    pub fn max_label(&self) -> Option<u32> {
        self.labels.iter().copied().max()
    }
}

/// Role a dataset plays in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    IdTrain,
    IdVal,
    IdTest,
    Ood,
    Shifted,
}

impl Role {
    pub const ALL: [Role; 5] = [Role::IdTrain, Role::IdVal, Role::IdTest, Role::Ood, Role::Shifted];

    /// Roles whose bundles must carry labels.
    pub fn requires_labels(self) -> bool {
        !matches!(self, Role::Ood)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::IdTrain => "id-train",
            Role::IdVal => "id-val",
            Role::IdTest => "id-test",
            Role::Ood => "ood",
            Role::Shifted => "shifted",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown role {s:?}")))
    }
}

/// Where a dataset came from: a shift family and severity, or an OOD kind.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub family: String,
    pub severity: Option<u8>,
    pub seed: Option<u64>,
}

impl Provenance {
    pub fn shifted(family: impl Into<String>, severity: u8, seed: u64) -> Self {
        Provenance {
            family: family.into(),
            severity: Some(severity),
            seed: Some(seed),
        }
    }

    pub fn kind(family: impl Into<String>, seed: u64) -> Self {
        Provenance {
            family: family.into(),
            severity: None,
            seed: Some(seed),
        }
    }
}

/// A feature matrix together with its labels, role and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub features: FeatureMatrix,
    pub labels: Option<LabelVector>,
    pub role: Role,
    pub provenance: Option<Provenance>,
}

impl DatasetBundle {
    pub fn new(
        features: FeatureMatrix,
        labels: Option<LabelVector>,
        role: Role,
        provenance: Option<Provenance>,
    ) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != features.n() {
                return Err(Error::Validation(format!(
                    "{} labels for {} feature rows",
                    l.len(),
                    features.n()
                )));
            }
        }
        if role.requires_labels() && labels.is_none() {
            return Err(Error::Validation(format!("{role} bundle must carry labels")));
        }
        if role == Role::Shifted {
            match &provenance {
                Some(Provenance { severity: Some(s), .. }) if (1..=5).contains(s) => {}
                Some(_) => return Err(Error::Validation("shifted bundle needs a severity in 1..=5".into())),
                None => return Err(Error::Validation("shifted bundle needs provenance".into())),
            }
        }
        Ok(DatasetBundle {
            features,
            labels,
            role,
            provenance,
        })
    }

    pub fn labeled(features: FeatureMatrix, labels: LabelVector, role: Role) -> Result<Self> {
        Self::new(features, Some(labels), role, None)
    }

    pub fn len(&self) -> usize {
        self.features.n()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.d()
    }

    pub fn labels(&self) -> Result<&LabelVector> {
        self.labels
            .as_ref()
            .ok_or_else(|| Error::precondition(format!("{} bundle has no labels", self.role)))
    }

    /// Subset of rows, keeping role and provenance.
    pub fn select(&self, indices: &[usize]) -> DatasetBundle {
        DatasetBundle {
            features: self.features.select(indices),
            labels: self.labels.as_ref().map(|l| l.select(indices)),
            role: self.role,
            provenance: self.provenance.clone(),
        }
    }

    /// Short display name used in reports.
    pub fn name(&self) -> String {
        match &self.provenance {
            Some(Provenance {
                family,
                severity: Some(s),
                ..
            }) => format!("{family}@{s}"),
            Some(p) => p.family.clone(),
            None => self.role.to_string(),
        }
    }
}
