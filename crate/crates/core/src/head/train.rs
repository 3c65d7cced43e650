use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{check_dropout_rate, dropout_mask, CosineHead, Head, LinearHead};
use crate::data::DatasetBundle;
use crate::error::{check_dim, Error, Result};
use crate::math::{dot, log_sum_exp, norm, sigmoid, softmax, softplus};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    Linear,
    Cosine,
}

impl std::str::FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(HeadKind::Linear),
            "cosine" => Ok(HeadKind::Cosine),
            other => Err(Error::precondition(format!("unknown head kind {other:?}"))),
        }
    }
}

/// SGD-with-momentum settings. The learning rate is divided by 10 whenever
/// validation accuracy has not improved for `patience` epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    /// L2 penalty for the linear head. The cosine head is never decayed.
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub patience: usize,
    /// Inverted-dropout rate on the input features while training a linear
    /// head; zero disables it.
    pub dropout: f64,
    /// Class count; inferred from the labels when `None`.
    pub classes: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            epochs: 30,
            batch_size: 64,
            seed: 0,
            patience: 5,
            dropout: 0.0,
            classes: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::precondition("learning rate must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::precondition("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::precondition("batch size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::precondition("momentum must lie in [0, 1)"));
        }
        check_dropout_rate(self.dropout)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedHead {
    pub head: Head,
    pub val_accuracy: f64,
    /// Learning rate in effect after the last epoch.
    pub final_learning_rate: f64,
}

pub fn train_head(
    train: &DatasetBundle,
    val: &DatasetBundle,
    kind: HeadKind,
    cfg: &TrainConfig,
) -> Result<TrainedHead> {
    cfg.validate()?;
    let train_labels = train.labels()?;
    let val_labels = val.labels()?;
    check_dim(train.dim(), val.dim())?;
    if train.is_empty() {
        return Err(Error::precondition("training set is empty"));
    }
    let inferred = train_labels
        .max_label()
        .max(val_labels.max_label())
        .map_or(0, |m| m as usize + 1);
    let classes = cfg.classes.unwrap_or(inferred);
    if classes < inferred {
        return Err(Error::precondition(format!(
            "labels reach class {} but only {classes} classes configured",
            inferred - 1
        )));
    }
    if classes < 2 {
        return Err(Error::precondition("training needs at least 2 classes"));
    }
    let d = train.dim();
    let mut rng = crate::math::rng(cfg.seed);

    let xs: Vec<Vec<f64>> = (0..train.len()).map(|i| train.features.row_f64(i)).collect();
    let ys: Vec<usize> = (0..train.len()).map(|i| train_labels.get(i)).collect();

    let mut model = match kind {
        HeadKind::Linear => {
            let w = (0..classes * d)
                .map(|_| 0.01 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            Model::Linear(LinearHead::new(classes, d, w, vec![0.0; classes])?)
        }
        HeadKind::Cosine => {
            let scale = 1.0 / (d as f64).sqrt();
            let w = (0..classes * d)
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            Model::Cosine(CosineHead::new(classes, d, w, vec![0.0; d], 0.0)?)
        }
    };
    let mut velocity = vec![0.0; model.param_count()];
    let mut grad = vec![0.0; model.param_count()];
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut lr = cfg.learning_rate;
    let mut best_acc = f64::NEG_INFINITY;
    let mut stale = 0;
    let mut val_acc = 0.0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let mut loss = 0.0;
            for &i in batch {
                let x = if cfg.dropout > 0.0 && kind == HeadKind::Linear {
                    dropout_mask(&xs[i], cfg.dropout, &mut rng)
                } else {
                    xs[i].clone()
                };
                loss += model.accumulate_gradient(&x, ys[i], &mut grad);
            }
            let scale = 1.0 / batch.len() as f64;
            if !(loss * scale).is_finite() {
                return Err(Error::Training {
                    epoch,
                    reason: "non-finite loss".into(),
                });
            }
            let decay = match kind {
                HeadKind::Linear => cfg.weight_decay,
                HeadKind::Cosine => 0.0,
            };
            let params = model.params_mut();
            for ((p, g), v) in params.into_iter().zip(&grad).zip(&mut velocity) {
                let step = g * scale + decay * *p;
                *v = cfg.momentum * *v + step;
                *p -= lr * *v;
            }
            if !model.is_finite() {
                return Err(Error::Training {
                    epoch,
                    reason: "parameters became non-finite".into(),
                });
            }
        }
        val_acc = model.accuracy(val)?;
        if val_acc > best_acc {
            best_acc = val_acc;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience.max(1) {
                lr /= 10.0;
                stale = 0;
            }
        }
    }
    let head = model.into_head()?;
    Ok(TrainedHead {
        head,
        val_accuracy: val_acc,
        final_learning_rate: lr,
    })
}

enum Model {
    Linear(LinearHead),
    Cosine(CosineHead),
}

impl Model {
    fn param_count(&self) -> usize {
        match self {
            Model::Linear(h) => h.classes * h.dim + h.classes,
            Model::Cosine(h) => h.classes * h.dim + h.dim + 1,
        }
    }

    /// Flattened mutable parameter view in the same order as the gradient.
    fn params_mut(&mut self) -> Vec<&mut f64> {
        match self {
            Model::Linear(h) => {
                let (w, b) = h.params_mut();
                w.iter_mut().chain(b.iter_mut()).collect()
            }
            Model::Cosine(h) => {
                let (w, ws, bs) = h.params_mut();
                w.iter_mut().chain(ws.iter_mut()).chain(std::iter::once(bs)).collect()
            }
        }
    }

    fn is_finite(&self) -> bool {
        match self {
            Model::Linear(h) => h.weights.iter().chain(&h.bias).all(|v| v.is_finite()),
            Model::Cosine(h) => {
                h.weights.iter().chain(&h.scale_weights).all(|v| v.is_finite()) && h.scale_bias.is_finite()
            }
        }
    }

    /// Adds the cross-entropy gradient for one sample into `grad` and returns its loss.
    fn accumulate_gradient(&self, x: &[f64], y: usize, grad: &mut [f64]) -> f64 {
        match self {
            Model::Linear(h) => {
                let logits = h.logits_unchecked(x);
                let loss = log_sum_exp(&logits) - logits[y];
                let p = softmax(&logits);
                let d = h.dim;
                for c in 0..h.classes {
                    let e = p[c] - if c == y { 1.0 } else { 0.0 };
                    for (g, xi) in grad[c * d..(c + 1) * d].iter_mut().zip(x) {
                        *g += e * xi;
                    }
                    grad[h.classes * d + c] += e;
                }
                loss
            }
            Model::Cosine(h) => {
                let d = h.dim;
                let xn = norm(x);
                if xn == 0.0 {
                    return 0.0;
                }
                let z = dot(&h.scale_weights, x) + h.scale_bias;
                let s = softplus(z) + 1.0;
                let mut cos = vec![0.0; h.classes];
                let mut wn = vec![0.0; h.classes];
                for c in 0..h.classes {
                    let w = h.class_weights(c);
                    wn[c] = norm(w);
                    cos[c] = dot(x, w) / (xn * wn[c]);
                }
                let logits: Vec<f64> = cos.iter().map(|c| s * c).collect();
                let loss = log_sum_exp(&logits) - logits[y];
                let p = softmax(&logits);
                let mut dl_ds = 0.0;
                for c in 0..h.classes {
                    let e = p[c] - if c == y { 1.0 } else { 0.0 };
                    dl_ds += e * cos[c];
                    let w = h.class_weights(c);
                    let coef = e * s / wn[c];
                    for ((g, xi), wi) in grad[c * d..(c + 1) * d].iter_mut().zip(x).zip(w) {
                        *g += coef * (xi / xn - cos[c] * wi / wn[c]);
                    }
                }
                let dz = dl_ds * sigmoid(z);
                let off = h.classes * d;
                for (g, xi) in grad[off..off + d].iter_mut().zip(x) {
                    *g += dz * xi;
                }
                grad[off + d] += dz;
                loss
            }
        }
    }

    fn accuracy(&self, val: &DatasetBundle) -> Result<f64> {
        let labels = val.labels()?;
        if val.is_empty() {
            return Ok(0.0);
        }
        let head = self.as_head();
        let mut correct = 0usize;
        for i in 0..val.len() {
            let x = val.features.row_f64(i);
            let pred = match &head {
                HeadRef::Linear(h) => crate::math::argmax(&h.logits_unchecked(&x)).0,
                HeadRef::Cosine(h) => match h.logits(&x) {
                    Ok(l) => crate::math::argmax(&l).0,
                    Err(_) => 0,
                },
            };
            if pred == labels.get(i) {
                correct += 1;
            }
        }
        Ok(correct as f64 / val.len() as f64)
    }

    fn as_head(&self) -> HeadRef<'_> {
        match self {
            Model::Linear(h) => HeadRef::Linear(h),
            Model::Cosine(h) => HeadRef::Cosine(h),
        }
    }

    fn into_head(self) -> Result<Head> {
        Ok(match self {
            Model::Linear(h) => Head::Linear(h),
            Model::Cosine(h) => {
                // Re-validate: a class row could in principle collapse to zero.
                Head::Cosine(CosineHead::new(
                    h.classes,
                    h.dim,
                    h.weights,
                    h.scale_weights,
                    h.scale_bias,
                )?)
            }
        })
    }
}

enum HeadRef<'a> {
    Linear(&'a LinearHead),
    Cosine(&'a CosineHead),
}
