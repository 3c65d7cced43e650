//! Class-conditional Gaussians with a shared covariance per feature layer.
//!
//! The layer score is the negated squared Mahalanobis distance to the closest
//! class mean; the sample score is a weighted sum of layer scores.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::logistic::{fit_logistic, LogisticConfig};
use super::odin::perturb;
use crate::data::{FeatureMatrix, LabelVector};
use crate::error::{check_dim, Error, Result};
use crate::head::{Head, Temperature};

/// Ridge added to each pooled covariance, relative to its mean variance:
/// `λ = scale · trace(Σ) / d`.
pub const DEFAULT_RIDGE_SCALE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MahaLayer {
    dim: usize,
    means: Vec<Vec<f64>>,
    /// Row-major `d × d` inverse of the regularized covariance.
    precision: Vec<f64>,
    ridge: f64,
}

impl MahaLayer {
    /// Builds a layer from explicit means and a precision matrix.
    pub fn new(means: Vec<Vec<f64>>, precision: Vec<f64>, ridge: f64) -> Result<Self> {
        let dim = means
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::precondition("a layer needs class means"))?;
        if let Some(m) = means.iter().find(|m| m.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: m.len(),
            });
        }
        check_dim(dim * dim, precision.len())?;
        Ok(MahaLayer {
            dim,
            means,
            precision,
            ridge,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn precision(&self) -> &[f64] {
        &self.precision
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    fn quadratic(&self, v: &[f64]) -> f64 {
        let d = self.dim;
        let mut q = 0.0;
        for i in 0..d {
            let row = &self.precision[i * d..(i + 1) * d];
            let pv: f64 = row.iter().zip(v).map(|(p, x)| p * x).sum();
            q += v[i] * pv;
        }
        q
    }

    /// `−min_c (x − μ_c)ᵀ P (x − μ_c)`.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        let mut best = f64::INFINITY;
        let mut diff = vec![0.0; self.dim];
        for mu in &self.means {
            for ((d, xi), mi) in diff.iter_mut().zip(x).zip(mu) {
                *d = xi - mi;
            }
            best = best.min(self.quadratic(&diff));
        }
        Ok(-best)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MahaModel {
    layers: Vec<MahaLayer>,
    weights: Vec<f64>,
}

impl MahaModel {
    pub fn new(layers: Vec<MahaLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::precondition("a Mahalanobis model needs at least one layer"));
        }
        let weights = vec![1.0; layers.len()];
        Ok(MahaModel { layers, weights })
    }

    pub fn layers(&self) -> &[MahaLayer] {
        &self.layers
    }

    /// Weights fitted with the model; all ones after [`fit_mahalanobis`].
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Per-layer scores `s_l` for one sample.
    pub fn layer_scores(&self, xs: &[&[f64]]) -> Result<Vec<f64>> {
        check_dim(self.layers.len(), xs.len())?;
        self.layers.iter().zip(xs).map(|(l, x)| l.score(x)).collect()
    }
}

/// `Σ_l α_l s_l` for one sample given one feature vector per layer.
pub fn score_mahalanobis(model: &MahaModel, xs: &[&[f64]], weights: &[f64]) -> Result<f64> {
    check_dim(model.layers.len(), weights.len())?;
    Ok(model.layer_scores(xs)?.iter().zip(weights).map(|(s, a)| s * a).sum())
}

pub fn fit_mahalanobis(layers: &[(&FeatureMatrix, &LabelVector)]) -> Result<MahaModel> {
    fit_mahalanobis_with(layers, DEFAULT_RIDGE_SCALE)
}

/// Fits class means and a ridge-regularized pooled covariance per layer.
pub fn fit_mahalanobis_with(layers: &[(&FeatureMatrix, &LabelVector)], ridge_scale: f64) -> Result<MahaModel> {
    if layers.is_empty() {
        return Err(Error::precondition("Mahalanobis fit needs at least one layer"));
    }
    let fitted = layers
        .iter()
        .enumerate()
        .map(|(l, (x, y))| fit_layer(l, x, y, ridge_scale))
        .collect::<Result<Vec<_>>>()?;
    MahaModel::new(fitted)
}

fn fit_layer(layer: usize, x: &FeatureMatrix, y: &LabelVector, ridge_scale: f64) -> Result<MahaLayer> {
    check_dim(x.n(), y.len())?;
    let classes = y.max_label().map_or(0, |m| m as usize + 1);
    let d = x.d();
    let mut counts = vec![0usize; classes];
    let mut means = vec![vec![0.0; d]; classes];
    for (i, row) in x.rows().enumerate() {
        let c = y.get(i);
        counts[c] += 1;
        for (m, v) in means[c].iter_mut().zip(row) {
            *m += *v as f64;
        }
    }
    if let Some(c) = counts.iter().position(|&n| n < 2) {
        return Err(Error::precondition(format!(
            "class {c} has {} samples in layer {layer}; at least 2 are required",
            counts[c]
        )));
    }
    for (m, &n) in means.iter_mut().zip(&counts) {
        for v in m.iter_mut() {
            *v /= n as f64;
        }
    }
    let mut cov = DMatrix::<f64>::zeros(d, d);
    let mut diff = vec![0.0; d];
    for (i, row) in x.rows().enumerate() {
        let mu = &means[y.get(i)];
        for ((dv, v), m) in diff.iter_mut().zip(row).zip(mu) {
            *dv = *v as f64 - m;
        }
        for a in 0..d {
            for b in 0..=a {
                cov[(a, b)] += diff[a] * diff[b];
            }
        }
    }
    let n = x.n() as f64;
    for a in 0..d {
        for b in 0..=a {
            let v = cov[(a, b)] / n;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    let ridge = ridge_scale * cov.trace() / d as f64;
    for a in 0..d {
        cov[(a, a)] += ridge;
    }
    let chol = cov.cholesky().ok_or(Error::SingularCovariance { layer })?;
    let inv = chol.inverse();
    if inv.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularCovariance { layer });
    }
    let mut precision = vec![0.0; d * d];
    for a in 0..d {
        for b in 0..d {
            precision[a * d + b] = 0.5 * (inv[(a, b)] + inv[(b, a)]);
        }
    }
    MahaLayer::new(means, precision, ridge)
}

/// Layer weights learned by discriminating ID samples from FGSM-perturbed ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvWeights {
    pub weights: Vec<f64>,
    /// True when the fit was degenerate and all-ones weights were used instead.
    pub fallback: bool,
}

/// FGSM magnitude used by default: a tenth of the mean ID feature norm.
pub fn default_fgsm_epsilon(id_train: &FeatureMatrix) -> f64 {
    0.1 * id_train.mean_row_norm()
}

/// Fits per-layer weights by logistic regression on raw layer scores, with
/// ID samples as positives and `x − ε·sgn(∇ log max softmax)` as negatives.
///
/// The perturbation is applied to the head-facing layer (`id_layers[0]`);
/// the other layers have no differentiable path from the head, so their
/// features are kept as-is for the negatives.
pub fn fit_maha_weights_adv(
    model: &MahaModel,
    head: &Head,
    id_layers: &[&FeatureMatrix],
    epsilon: f64,
) -> Result<AdvWeights> {
    check_dim(model.layers.len(), id_layers.len())?;
    check_dim(head.dim(), id_layers[0].d())?;
    let n = id_layers[0].n();
    if n == 0 {
        return Err(Error::precondition("adversarial weight fit needs ID samples"));
    }
    if !(epsilon.is_finite() && epsilon >= 0.0) {
        return Err(Error::precondition("FGSM epsilon must be nonnegative"));
    }
    let mut feats = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(2 * n);
    for i in 0..n {
        let rows: Vec<Vec<f64>> = id_layers.iter().map(|l| l.row_f64(i)).collect();
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        feats.push(model.layer_scores(&refs)?);
        labels.push(true);

        let adv = perturb(head, &rows[0], -epsilon, Temperature::ONE)?;
        let mut adv_refs = refs.clone();
        adv_refs[0] = &adv;
        feats.push(model.layer_scores(&adv_refs)?);
        labels.push(false);
    }
    let ones = AdvWeights {
        weights: vec![1.0; model.layers.len()],
        fallback: true,
    };
    if feats.chunks(2).all(|p| p[0] == p[1]) {
        log::warn!("adversarial negatives coincide with ID samples; using unit layer weights");
        return Ok(ones);
    }
    let cfg = LogisticConfig {
        standardize: false,
        ..Default::default()
    };
    match fit_logistic(&feats, &labels, &cfg) {
        Ok(m) => {
            let w = m.raw_coefficients();
            if w.iter().all(|v| v.abs() < 1e-12) {
                log::warn!("degenerate adversarial weight fit; using unit layer weights");
                Ok(ones)
            } else {
                Ok(AdvWeights {
                    weights: w,
                    fallback: false,
                })
            }
        }
        Err(e) => {
            log::warn!("adversarial weight fit failed ({e}); using unit layer weights");
            Ok(ones)
        }
    }
}
