//! Feature-space shift families. Nineteen families are built from eight
//! transform kinds with randomized parameters; each has five strictly
//! increasing severity magnitudes growing geometrically by a factor of 2.
//!
//! For a fixed seed the random draws are identical across severities, so a
//! family's severities differ only in magnitude.

use std::fmt;

use rand::Rng;
use rand_distr::{StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use crate::data::{DatasetBundle, FeatureMatrix, Provenance, Role};
use crate::error::{check_dim, Error, Result};
use crate::math::{derive_seed, dot, gaussian_vec, norm, rng};

pub const SEVERITIES: usize = 5;
const STANDARD_FAMILIES: usize = 19;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransformKind {
    AdditiveNoise,
    MultiplicativeScale,
    Rotation,
    CoordinateDropout,
    MeanTranslation,
    CovarianceInflation,
    Quantization,
    HeavyTail,
}

impl TransformKind {
    pub const ALL: [TransformKind; 8] = [
        TransformKind::AdditiveNoise,
        TransformKind::MultiplicativeScale,
        TransformKind::Rotation,
        TransformKind::CoordinateDropout,
        TransformKind::MeanTranslation,
        TransformKind::CovarianceInflation,
        TransformKind::Quantization,
        TransformKind::HeavyTail,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TransformKind::AdditiveNoise => "additive-noise",
            TransformKind::MultiplicativeScale => "multiplicative-scale",
            TransformKind::Rotation => "rotation",
            TransformKind::CoordinateDropout => "coordinate-dropout",
            TransformKind::MeanTranslation => "mean-translation",
            TransformKind::CovarianceInflation => "covariance-inflation",
            TransformKind::Quantization => "quantization",
            TransformKind::HeavyTail => "heavy-tail",
        }
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Family-specific random parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum FamilyParams {
    None,
    /// Mutually orthonormal rotation planes `(u, v)`.
    Planes {
        planes: Vec<(Vec<f64>, Vec<f64>)>,
    },
    /// Unit translation direction.
    Direction {
        direction: Vec<f64>,
    },
    /// Per-coordinate noise scales with unit mean square.
    Scales {
        scales: Vec<f64>,
    },
    /// Student-t degrees of freedom.
    Tail {
        dof: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftFamily {
    /// 1-based family id.
    pub id: usize,
    pub name: String,
    pub kind: TransformKind,
    pub dim: usize,
    /// Magnitude per severity 1..=5, strictly increasing.
    pub magnitudes: [f64; SEVERITIES],
    pub params: FamilyParams,
}

fn geometric(base: f64) -> [f64; SEVERITIES] {
    std::array::from_fn(|i| base * f64::from(1u32 << i))
}

fn orthonormal<R: Rng>(r: &mut R, d: usize, k: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v = gaussian_vec(r, d);
        for b in &basis {
            let p = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let n = norm(&v);
        if n > 1e-8 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

impl ShiftFamily {
    /// Builds one family of the given kind. `spread` is the within-class
    /// standard deviation of the data it will be applied to; magnitudes are
    /// expressed relative to it.
    pub fn new(id: usize, kind: TransformKind, spread: f64, dim: usize, seed: u64) -> Result<Self> {
        if !(spread > 0.0 && spread.is_finite()) {
            return Err(Error::precondition("spread must be positive"));
        }
        if dim == 0 {
            return Err(Error::precondition("dimension must be at least 1"));
        }
        let mut r = rng(derive_seed(seed, id as u64));
        let mut u = |lo: f64, hi: f64| lo + (hi - lo) * r.random::<f64>();
        let base = match kind {
            TransformKind::AdditiveNoise => u(0.08, 0.12) * spread,
            TransformKind::MultiplicativeScale => u(0.015, 0.03),
            TransformKind::Rotation => u(std::f64::consts::PI / 96.0, std::f64::consts::PI / 64.0),
            TransformKind::CoordinateDropout => u(0.02, 0.04),
            TransformKind::MeanTranslation => u(0.1, 0.2) * spread,
            TransformKind::CovarianceInflation => u(0.08, 0.12) * spread,
            TransformKind::Quantization => u(0.2, 0.35) * spread,
            TransformKind::HeavyTail => u(0.05, 0.08) * spread,
        };
        let mut r = rng(derive_seed(seed, 1000 + id as u64));
        let params = match kind {
            TransformKind::Rotation => {
                let k = (dim / 2).max(usize::from(dim >= 2));
                let basis = orthonormal(&mut r, dim, 2 * k);
                let planes = basis.chunks(2).map(|p| (p[0].clone(), p[1].clone())).collect();
                FamilyParams::Planes { planes }
            }
            TransformKind::MeanTranslation => FamilyParams::Direction {
                direction: orthonormal(&mut r, dim, 1).remove(0),
            },
            TransformKind::CovarianceInflation => {
                let raw: Vec<f64> = (0..dim).map(|_| r.sample::<f64, _>(StandardNormal).exp()).collect();
                let ms = raw.iter().map(|s| s * s).sum::<f64>() / dim as f64;
                FamilyParams::Scales {
                    scales: raw.iter().map(|s| s / ms.sqrt()).collect(),
                }
            }
            TransformKind::HeavyTail => FamilyParams::Tail {
                dof: [2.5, 3.0, 4.0][r.random_range(0..3)],
            },
            _ => FamilyParams::None,
        };
        Ok(ShiftFamily {
            id,
            name: format!("f{id:02}-{kind}"),
            kind,
            dim,
            magnitudes: geometric(base),
            params,
        })
    }

    /// The 19 standard families: kinds assigned round-robin, so every kind
    /// appears two or three times with different random parameters. Family 1
    /// is additive noise with magnitudes (0.1, 0.2, 0.4, 0.8, 1.6) × spread.
    pub fn standard_set(spread: f64, dim: usize, seed: u64) -> Result<Vec<ShiftFamily>> {
        (1..=STANDARD_FAMILIES)
            .map(|id| {
                let kind = TransformKind::ALL[(id - 1) % TransformKind::ALL.len()];
                let mut f = ShiftFamily::new(id, kind, spread, dim, seed)?;
                if id == 1 {
                    f.magnitudes = geometric(0.1 * spread);
                }
                Ok(f)
            })
            .collect()
    }

    /// Looks a family up by name or by numeric id.
    pub fn find<'a>(families: &'a [ShiftFamily], key: &str) -> Result<&'a ShiftFamily> {
        families
            .iter()
            .find(|f| f.name == key || key.parse::<usize>().is_ok_and(|id| id == f.id))
            .ok_or_else(|| Error::precondition(format!("unknown shift family {key:?}")))
    }

    pub fn magnitude(&self, severity: u8) -> Result<f64> {
        if !(1..=SEVERITIES as u8).contains(&severity) {
            return Err(Error::precondition(format!(
                "severity must be in 1..=5, got {severity}"
            )));
        }
        Ok(self.magnitudes[severity as usize - 1])
    }

    fn transform_row<R: Rng>(&self, x: &mut [f64], m: f64, r: &mut R) {
        match (&self.kind, &self.params) {
            (TransformKind::AdditiveNoise, _) => {
                for v in x.iter_mut() {
                    *v += m * r.sample::<f64, _>(StandardNormal);
                }
            }
            (TransformKind::MultiplicativeScale, _) => {
                for v in x.iter_mut() {
                    *v *= 1.0 + m * r.sample::<f64, _>(StandardNormal);
                }
            }
            (TransformKind::Rotation, FamilyParams::Planes { planes }) => {
                let (s, c) = m.sin_cos();
                for (u, w) in planes {
                    let a = dot(x, u);
                    let b = dot(x, w);
                    let da = a * (c - 1.0) - b * s;
                    let db = a * s + b * (c - 1.0);
                    for ((v, ui), wi) in x.iter_mut().zip(u).zip(w) {
                        *v += da * ui + db * wi;
                    }
                }
            }
            (TransformKind::CoordinateDropout, _) => {
                let (keep, kept) =
                    x.iter().copied().enumerate().fold(
                        (0, 0.0f64),
                        |best, (i, v)| if v.abs() > best.1.abs() { (i, v) } else { best },
                    );
                for v in x.iter_mut() {
                    if r.random::<f64>() < m {
                        *v = 0.0;
                    }
                }
                // never drop every coordinate: a zero row has no direction
                if x.iter().all(|&v| v == 0.0) {
                    x[keep] = kept;
                }
            }
            (TransformKind::MeanTranslation, FamilyParams::Direction { direction }) => {
                let scale = m * (x.len() as f64).sqrt();
                for (v, u) in x.iter_mut().zip(direction) {
                    *v += scale * u;
                }
            }
            (TransformKind::CovarianceInflation, FamilyParams::Scales { scales }) => {
                for (v, s) in x.iter_mut().zip(scales) {
                    *v += m * s * r.sample::<f64, _>(StandardNormal);
                }
            }
            (TransformKind::Quantization, _) => {
                // mid-rise grid: no level sits at zero
                for v in x.iter_mut() {
                    *v = m * ((*v / m).floor() + 0.5);
                }
            }
            (TransformKind::HeavyTail, FamilyParams::Tail { dof }) => {
                let t = StudentT::new(*dof).expect("positive degrees of freedom");
                for v in x.iter_mut() {
                    *v += m * r.sample::<f64, _>(t);
                }
            }
            (kind, params) => unreachable!("{kind} family with parameters {params:?}"),
        }
    }
}

/// Applies a family at a severity to every row. Pure function of
/// (family, severity, seed).
pub fn apply_shift_features(
    features: &FeatureMatrix,
    family: &ShiftFamily,
    severity: u8,
    seed: u64,
) -> Result<FeatureMatrix> {
    check_dim(family.dim, features.d())?;
    let m = family.magnitude(severity)?;
    let mut r = rng(derive_seed(seed, 0x5348_4946_5400 + family.id as u64));
    let mut out = Vec::with_capacity(features.values().len());
    let mut row = vec![0.0; features.d()];
    for x in features.rows() {
        row.iter_mut().zip(x).for_each(|(o, &v)| *o = f64::from(v));
        family.transform_row(&mut row, m, &mut r);
        out.extend(row.iter().map(|&v| v as f32));
    }
    FeatureMatrix::new(features.n(), features.d(), out)
}

/// Shifted copy of a labeled bundle: labels are kept (the shift changes
/// p(x) but not p(y|x)); role becomes `shifted` with provenance set.
pub fn apply_shift(bundle: &DatasetBundle, family: &ShiftFamily, severity: u8, seed: u64) -> Result<DatasetBundle> {
    let features = apply_shift_features(&bundle.features, family, severity, seed)?;
    DatasetBundle::new(
        features,
        bundle.labels.clone(),
        Role::Shifted,
        Some(Provenance::shifted(family.name.clone(), severity, seed)),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabelVector;

    fn cloud(n: usize, d: usize, seed: u64) -> FeatureMatrix {
        let mut r = rng(seed);
        let v = (0..n * d)
            .map(|_| (3.0 + r.sample::<f64, _>(StandardNormal)) as f32)
            .collect();
        FeatureMatrix::new(n, d, v).unwrap()
    }

    fn bundle(n: usize, d: usize) -> DatasetBundle {
        DatasetBundle::labeled(cloud(n, d, 1), LabelVector::new(vec![0; n]), Role::IdTest).unwrap()
    }

    #[test]
    fn standard_set_has_nineteen_increasing_families() {
        let fams = ShiftFamily::standard_set(1.0, 8, 3).unwrap();
        assert_eq!(fams.len(), 19);
        for f in &fams {
            assert!(f.magnitudes.windows(2).all(|w| w[1] > w[0]), "{}", f.name);
        }
        for k in TransformKind::ALL {
            assert!(fams.iter().filter(|f| f.kind == k).count() >= 2);
        }
        let want = [0.1, 0.2, 0.4, 0.8, 1.6];
        assert!(fams[0].magnitudes.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-12));
        assert_eq!(fams[0].kind, TransformKind::AdditiveNoise);
    }

    #[test]
    fn shifted_rows_are_never_all_zero() {
        let b = bundle(500, 2);
        for f in ShiftFamily::standard_set(3.0, 2, 4).unwrap() {
            for s in 1..=5u8 {
                let out = apply_shift(&b, &f, s, 9).unwrap();
                assert!(
                    out.features.rows().all(|r| r.iter().any(|&v| v != 0.0)),
                    "{} @{s}",
                    f.name
                );
            }
        }
    }

    #[test]
    fn additive_noise_displacement_scales_with_magnitude() {
        let fams = ShiftFamily::standard_set(1.0, 16, 3).unwrap();
        let b = bundle(2000, 16);
        let disp = |sev| {
            let s = apply_shift(&b, &fams[0], sev, 7).unwrap();
            let mut total = 0.0;
            for i in 0..b.len() {
                let a = b.features.row_f64(i);
                let c = s.features.row_f64(i);
                total += a.iter().zip(&c).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            }
            total / b.len() as f64
        };
        let ratio = disp(5) / disp(1);
        assert!((ratio - 16.0).abs() < 0.1, "ratio {ratio}");
    }

    #[test]
    fn rotation_preserves_row_norms() {
        let fams = ShiftFamily::standard_set(1.0, 9, 3).unwrap();
        let rot = fams.iter().find(|f| f.kind == TransformKind::Rotation).unwrap();
        let b = bundle(200, 9);
        for sev in 1..=5 {
            let s = apply_shift(&b, rot, sev, 1).unwrap();
            for i in 0..b.len() {
                let n0 = norm(&b.features.row_f64(i));
                let n1 = norm(&s.features.row_f64(i));
                assert!((n0 - n1).abs() <= 1e-6 * n0, "{n0} vs {n1}");
            }
        }
    }

    #[test]
    fn deterministic_and_labels_kept() {
        let fams = ShiftFamily::standard_set(1.0, 4, 3).unwrap();
        let b = bundle(50, 4);
        for f in &fams {
            let a = apply_shift(&b, f, 3, 11).unwrap();
            assert_eq!(a, apply_shift(&b, f, 3, 11).unwrap());
            assert_eq!(a.labels, b.labels);
            assert_eq!(a.role, Role::Shifted);
            assert_eq!(a.provenance, Some(Provenance::shifted(f.name.clone(), 3, 11)));
        }
    }

    #[test]
    fn bad_severity_and_unknown_family() {
        let fams = ShiftFamily::standard_set(1.0, 4, 3).unwrap();
        assert!(apply_shift(&bundle(3, 4), &fams[0], 0, 1).is_err());
        assert!(apply_shift(&bundle(3, 4), &fams[0], 6, 1).is_err());
        assert!(ShiftFamily::find(&fams, "f99-nothing").is_err());
        assert_eq!(ShiftFamily::find(&fams, "2").unwrap().id, 2);
        assert_eq!(ShiftFamily::find(&fams, &fams[5].name).unwrap().id, 6);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let fams = ShiftFamily::standard_set(1.0, 4, 3).unwrap();
        assert!(apply_shift(&bundle(3, 5), &fams[0], 1, 1).is_err());
    }
}
