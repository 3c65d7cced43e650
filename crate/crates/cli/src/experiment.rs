//! Loading a manifest into named splits, and writing synthetic tasks out as
//! manifests.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use oodkit::data::{load_bundle, write_feature_file, write_label_file, ManifestEntry};
use oodkit::math::derive_seed;
use oodkit::synth::{gen_classification_task, gen_ood, OodKind, SyntheticTask, TaskSpec};
use oodkit::{DatasetBundle, Manifest, Role};

/// One loaded manifest.
pub struct Experiment {
    pub name: String,
    pub train: DatasetBundle,
    pub val: DatasetBundle,
    pub test: DatasetBundle,
    /// OOD and shifted entries with display names.
    pub others: Vec<(String, DatasetBundle)>,
}

fn entry_name(e: &ManifestEntry) -> String {
    match (&e.family, e.severity) {
        (Some(f), Some(s)) => format!("{f}@{s}"),
        (Some(f), None) => f.clone(),
        _ => Path::new(&e.path)
            .file_stem()
            .map_or_else(|| e.path.clone(), |s| s.to_string_lossy().into_owned()),
    }
}

/// Name of a dataset: the manifest's directory name.
pub fn dataset_name(manifest: &Path) -> String {
    manifest
        .canonicalize()
        .ok()
        .as_deref()
        .and_then(Path::parent)
        .and_then(Path::file_name)
        .map_or_else(|| "dataset".to_string(), |s| s.to_string_lossy().into_owned())
}

impl Experiment {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let manifest = Manifest::load(path).with_context(|| format!("loading manifest {}", path.display()))?;
        let bundles = load_bundle(&manifest, None)?;
        let mut train = None;
        let mut val = None;
        let mut test = None;
        let mut others = Vec::new();
        for (e, b) in manifest.entries.iter().zip(bundles) {
            match e.role {
                Role::IdTrain => train = Some(b),
                Role::IdVal if val.is_none() => val = Some(b),
                Role::IdTest if test.is_none() => test = Some(b),
                Role::Ood | Role::Shifted => others.push((entry_name(e), b)),
                role => log::warn!("ignoring extra {role} entry {}", e.path),
            }
        }
        let (Some(train), Some(val), Some(test)) = (train, val, test) else {
            bail!("{} needs id-train, id-val and id-test entries", path.display());
        };
        Ok(Experiment {
            name: dataset_name(path),
            train,
            val,
            test,
            others,
        })
    }

    pub fn with_role(&self, role: Role) -> impl Iterator<Item = &(String, DatasetBundle)> {
        self.others.iter().filter(move |(_, b)| b.role == role)
    }

    /// Root-mean within-class standard deviation of the training features,
    /// the scale the shift families are expressed in.
    pub fn feature_spread(&self) -> anyhow::Result<f64> {
        let labels = self.train.labels()?;
        let d = self.train.dim();
        let classes = labels.max_label().map_or(0, |m| m as usize + 1);
        let mut sums = vec![vec![0.0f64; d]; classes];
        let mut counts = vec![0usize; classes];
        for (i, row) in self.train.features.rows().enumerate() {
            let c = labels.get(i);
            counts[c] += 1;
            sums[c].iter_mut().zip(row).for_each(|(s, &v)| *s += v as f64);
        }
        let mut ss = 0.0;
        for (i, row) in self.train.features.rows().enumerate() {
            let c = labels.get(i);
            for (j, &v) in row.iter().enumerate() {
                let mu = sums[c][j] / counts[c] as f64;
                ss += (v as f64 - mu).powi(2);
            }
        }
        let dof = self.train.len().saturating_sub(classes).max(1);
        let spread = (ss / (dof * d) as f64).sqrt();
        if !(spread > 0.0) {
            bail!("training features have no within-class spread");
        }
        Ok(spread)
    }
}

fn write_split(dir: &Path, stem: &str, b: &DatasetBundle, entries: &mut Vec<ManifestEntry>) -> anyhow::Result<()> {
    let features = format!("{stem}.oodf");
    write_feature_file(&b.features, dir.join(&features))?;
    let labels = match &b.labels {
        Some(l) => {
            let name = format!("{stem}.oodl");
            write_label_file(l, dir.join(&name))?;
            Some(name)
        }
        None => None,
    };
    let prov = b.provenance.as_ref();
    entries.push(ManifestEntry {
        path: features,
        role: b.role,
        labels,
        family: prov.map(|p| p.family.clone()),
        severity: prov.and_then(|p| p.severity),
        seed: prov.and_then(|p| p.seed),
    });
    Ok(())
}

/// Generates a task with irrelevant and novel OOD sets and writes it under
/// `dir` as OODF/OODL files plus `manifest.json`.
pub fn write_synthetic(spec: &TaskSpec, ood_n: usize, dir: &Path) -> anyhow::Result<(PathBuf, SyntheticTask)> {
    let task = gen_classification_task(spec)?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut entries = Vec::new();
    write_split(dir, "train", &task.train, &mut entries)?;
    write_split(dir, "val", &task.val, &mut entries)?;
    write_split(dir, "test", &task.test, &mut entries)?;
    for (i, kind) in [OodKind::Irrelevant, OodKind::Novel].into_iter().enumerate() {
        let ood = gen_ood(&task, kind, ood_n, derive_seed(spec.seed, 0x6f6f_6400 + i as u64))?;
        write_split(dir, &format!("ood-{kind}"), &ood.bundle, &mut entries)?;
    }
    let manifest = Manifest::new(spec.dim, spec.classes, entries, dir);
    let path = dir.join("manifest.json");
    manifest.save(&path)?;
    std::fs::write(dir.join("spec.json"), serde_json::to_string_pretty(spec)? + "\n")?;
    Ok((path, task))
}
