use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::format::{read_feature_file, read_feature_header, read_label_file};
use super::{DatasetBundle, Provenance, Role};
use crate::error::{Error, Result};

/// One file entry of a manifest. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub role: Role,
    #[serde(default)]
    pub labels: Option<String>,
    #[serde(default)]
    pub family: Option<String>,
    #[serde(default)]
    pub severity: Option<u8>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl ManifestEntry {
    pub fn provenance(&self) -> Option<Provenance> {
        self.family.as_ref().map(|f| Provenance {
            family: f.clone(),
            severity: self.severity,
            seed: self.seed,
        })
    }
}

/// JSON index of the feature/label files making up an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub d: usize,
    pub classes: usize,
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    base_dir: PathBuf,
}

impl Manifest {
    pub fn new(d: usize, classes: usize, entries: Vec<ManifestEntry>, base_dir: impl Into<PathBuf>) -> Self {
        Manifest {
            d,
            classes,
            entries,
            base_dir: base_dir.into(),
        }
    }

    /// Parses and validates a manifest file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Manifest = serde_json::from_str(&text)?;
        m.base_dir = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.base_dir.join(rel)
    }

    /// Checks file existence, header dimensions and the single id-train rule.
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Validation(format!(
                "manifest declares {} classes, need at least 2",
                self.classes
            )));
        }
        let train = self.entries.iter().filter(|e| e.role == Role::IdTrain).count();
        if train != 1 {
            return Err(Error::Validation(format!(
                "manifest must have exactly one id-train entry, found {train}"
            )));
        }
        for e in &self.entries {
            let p = self.resolve(&e.path);
            let (_, d) = read_feature_header(&p)?;
            if d != self.d {
                return Err(Error::Validation(format!(
                    "{}: dimension {d} disagrees with manifest d={}",
                    e.path, self.d
                )));
            }
            if let Some(l) = &e.labels {
                let lp = self.resolve(l);
                if !lp.exists() {
                    return Err(Error::Validation(format!("label file {} not found", lp.display())));
                }
            }
            if e.role.requires_labels() && e.labels.is_none() {
                return Err(Error::Validation(format!("{} entry {} has no labels", e.role, e.path)));
            }
        }
        Ok(())
    }

    pub fn entries_with_role(&self, role: Role) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.role == role)
    }
}

/// Loads every entry whose role passes `filter` (all entries when `None`).
/// Files are read in parallel; output order follows the manifest.
pub fn load_bundle(manifest: &Manifest, filter: Option<Role>) -> Result<Vec<DatasetBundle>> {
    let selected: Vec<&ManifestEntry> = manifest
        .entries
        .iter()
        .filter(|e| filter.map_or(true, |r| e.role == r))
        .collect();
    selected.par_iter().map(|e| load_entry(manifest, e)).collect()
}

fn load_entry(manifest: &Manifest, e: &ManifestEntry) -> Result<DatasetBundle> {
    let features = read_feature_file(manifest.resolve(&e.path))?;
    if features.d() != manifest.d {
        return Err(Error::DimensionMismatch {
            expected: manifest.d,
            found: features.d(),
        });
    }
    let labels = match &e.labels {
        Some(l) => {
            let labels = read_label_file(manifest.resolve(l))?;
            labels.validate(manifest.classes)?;
            Some(labels)
        }
        None if e.role.requires_labels() => {
            return Err(Error::Validation(format!("{} entry {} has no labels", e.role, e.path)))
        }
        None => None,
    };
    DatasetBundle::new(features, labels, e.role, e.provenance())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{write_feature_file, write_label_file, FeatureMatrix, LabelVector};

    fn write_set(dir: &Path, name: &str, n: usize, d: usize) -> (String, String) {
        let f = FeatureMatrix::new(n, d, (0..n * d).map(|v| v as f32).collect()).unwrap();
        let l = LabelVector::new((0..n as u32).map(|i| i % 2).collect());
        let fp = format!("{name}.oodf");
        let lp = format!("{name}.oodl");
        write_feature_file(&f, dir.join(&fp)).unwrap();
        write_label_file(&l, dir.join(&lp)).unwrap();
        (fp, lp)
    }

    fn entry(path: String, role: Role, labels: Option<String>) -> ManifestEntry {
        ManifestEntry {
            path,
            role,
            labels,
            family: None,
            severity: None,
            seed: None,
        }
    }

    #[test]
    fn single_train_entry_loads() {
        let dir = tempfile::tempdir().unwrap();
        let (f, l) = write_set(dir.path(), "train", 4, 8);
        let m = Manifest::new(8, 2, vec![entry(f, Role::IdTrain, Some(l))], dir.path());
        m.save(dir.path().join("m.json")).unwrap();
        let m = Manifest::load(dir.path().join("m.json")).unwrap();
        let b = load_bundle(&m, Some(Role::IdTrain)).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].len(), 4);
    }

    #[test]
    fn mixed_dimensions_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (f1, l1) = write_set(dir.path(), "a", 4, 8);
        let (f2, l2) = write_set(dir.path(), "b", 4, 16);
        let m = Manifest::new(
            8,
            2,
            vec![entry(f1, Role::IdTrain, Some(l1)), entry(f2, Role::IdTest, Some(l2))],
            dir.path(),
        );
        assert!(m.validate().is_err());
        assert!(matches!(
            load_bundle(&m, None),
            Err(Error::DimensionMismatch { expected: 8, found: 16 })
        ));
    }

    #[test]
    fn thirty_shifted_entries_keep_provenance() {
        let dir = tempfile::tempdir().unwrap();
        let (f, l) = write_set(dir.path(), "train", 4, 3);
        let mut entries = vec![entry(f, Role::IdTrain, Some(l))];
        for fam in 0..6 {
            for sev in 1..=5u8 {
                let (f, l) = write_set(dir.path(), &format!("s{fam}_{sev}"), 3, 3);
                entries.push(ManifestEntry {
                    path: f,
                    role: Role::Shifted,
                    labels: Some(l),
                    family: Some(format!("fam{fam}")),
                    severity: Some(sev),
                    seed: Some(fam as u64),
                });
            }
        }
        let m = Manifest::new(3, 2, entries, dir.path());
        m.validate().unwrap();
        let b = load_bundle(&m, Some(Role::Shifted)).unwrap();
        assert_eq!(b.len(), 30);
        for (i, bundle) in b.iter().enumerate() {
            let p = bundle.provenance.as_ref().unwrap();
            assert_eq!(p.family, format!("fam{}", i / 5));
            assert_eq!(p.severity, Some((i % 5 + 1) as u8));
        }
    }

    #[test]
    fn two_train_entries_fail_validation() {
        let dir = tempfile::tempdir().unwrap();
        let (f, l) = write_set(dir.path(), "a", 2, 2);
        let m = Manifest::new(
            2,
            2,
            vec![
                entry(f.clone(), Role::IdTrain, Some(l.clone())),
                entry(f, Role::IdTrain, Some(l)),
            ],
            dir.path(),
        );
        assert!(m.validate().is_err());
    }

    #[test]
    fn labeled_role_without_labels_fails() {
        let dir = tempfile::tempdir().unwrap();
        let (f, l) = write_set(dir.path(), "a", 2, 2);
        let (g, _) = write_set(dir.path(), "b", 2, 2);
        let m = Manifest::new(
            2,
            2,
            vec![entry(f, Role::IdTrain, Some(l)), entry(g, Role::IdTest, None)],
            dir.path(),
        );
        assert!(m.validate().is_err());
        assert!(load_bundle(&m, Some(Role::IdTest)).is_err());
    }

    #[test]
    fn manifest_json_uses_fixed_keys() {
        let text = r#"{"d": 4, "classes": 3, "entries": [
            {"path": "a.oodf", "role": "id-train", "labels": "a.oodl", "family": null, "severity": null, "seed": null},
            {"path": "b.oodf", "role": "shifted", "labels": "b.oodl", "family": "noise", "severity": 2, "seed": 9}
        ]}"#;
        let m: Manifest = serde_json::from_str(text).unwrap();
        assert_eq!(m.entries[1].role, Role::Shifted);
        assert_eq!(m.entries[1].provenance().unwrap().severity, Some(2));
        let back = serde_json::to_value(&m).unwrap();
        assert!(back["entries"][0]["family"].is_null());
    }
}
