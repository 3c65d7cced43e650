//! Classification heads over feature vectors.
//!
//! Two heads are supported: a standard affine-softmax head and a scaled-cosine
//! head whose inverse temperature is predicted from the input. Both expose
//! closed-form gradients of the log max-probability with respect to the input,
//! which is all the input-perturbation scorers need.

mod checkpoint;
mod temperature;
mod train;

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use temperature::{fit_temperature, fit_temperature_logits, nll};
pub use train::{train_head, HeadKind, TrainConfig, TrainedHead};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::math::{argmax, dot, norm, sigmoid, softmax, softplus};

/// Softmax temperature; logits are divided by `T` before normalization.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Temperature(f64);

impl Temperature {
    pub const ONE: Temperature = Temperature(1.0);
    /// Fixed temperature used by the ODIN-style scorer.
    pub const ODIN: Temperature = Temperature(1000.0);

    pub fn new(t: f64) -> Result<Self> {
        if t.is_finite() && t > 0.0 {
            Ok(Temperature(t))
        } else {
            Err(Error::Domain(format!("temperature must be positive, got {t}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Temperature::ONE
    }
}

/// Affine head: `logits = W x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    classes: usize,
    dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl LinearHead {
    pub fn new(classes: usize, dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if classes < 2 {
            return Err(Error::precondition(format!(
                "a head needs at least 2 classes, got {classes}"
            )));
        }
        if dim == 0 {
            return Err(Error::precondition("a head needs dimension at least 1"));
        }
        check_dim(classes * dim, weights.len())?;
        check_dim(classes, bias.len())?;
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::Validation("head parameters must be finite".into()));
        }
        Ok(LinearHead {
            classes,
            dim,
            weights,
            bias,
        })
    }

    pub fn zeros(classes: usize, dim: usize) -> Result<Self> {
        Self::new(classes, dim, vec![0.0; classes * dim], vec![0.0; classes])
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn class_weights(&self, c: usize) -> &[f64] {
        &self.weights[c * self.dim..(c + 1) * self.dim]
    }

    pub(crate) fn params_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.weights, &mut self.bias)
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        Ok(self.logits_unchecked(x))
    }

    pub(crate) fn logits_unchecked(&self, x: &[f64]) -> Vec<f64> {
        (0..self.classes)
            .map(|c| dot(self.class_weights(c), x) + self.bias[c])
            .collect()
    }

    pub fn forward(&self, x: &[f64], t: Temperature) -> Result<Vec<f64>> {
        let logits = self.logits(x)?;
        Ok(softmax_at(&logits, t))
    }

    /// Forward pass with inverted dropout on the input features: each feature
    /// is zeroed with probability `p` and survivors are scaled by `1/(1-p)`.
    pub fn dropout_forward(&self, x: &[f64], p: f64, seed: u64) -> Result<Vec<f64>> {
        let mut rng = crate::math::rng(seed);
        self.dropout_forward_with(x, p, &mut rng)
    }

    pub(crate) fn dropout_forward_with<R: Rng>(&self, x: &[f64], p: f64, rng: &mut R) -> Result<Vec<f64>> {
        check_dropout_rate(p)?;
        check_dim(self.dim, x.len())?;
        if p == 0.0 {
            return self.forward(x, Temperature::ONE);
        }
        let masked = dropout_mask(x, p, rng);
        self.forward(&masked, Temperature::ONE)
    }
}

pub(crate) fn check_dropout_rate(p: f64) -> Result<()> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::precondition(format!("dropout rate must lie in [0, 1), got {p}")))
    }
}

pub(crate) fn dropout_mask<R: Rng>(x: &[f64], p: f64, rng: &mut R) -> Vec<f64> {
    let keep_scale = 1.0 / (1.0 - p);
    x.iter()
        .map(|&v| if rng.random::<f64>() < p { 0.0 } else { v * keep_scale })
        .collect()
}

/// Scaled-cosine head. Class scores are `s(x) · cos(x, W_c)` with
/// `s(x) = softplus(⟨w_s, x⟩ + b_s) + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineHead {
    classes: usize,
    dim: usize,
    weights: Vec<f64>,
    scale_weights: Vec<f64>,
    scale_bias: f64,
}

impl CosineHead {
    pub fn new(
        classes: usize,
        dim: usize,
        weights: Vec<f64>,
        scale_weights: Vec<f64>,
        scale_bias: f64,
    ) -> Result<Self> {
        if classes < 2 {
            return Err(Error::precondition(format!(
                "a head needs at least 2 classes, got {classes}"
            )));
        }
        if dim == 0 {
            return Err(Error::precondition("a head needs dimension at least 1"));
        }
        check_dim(classes * dim, weights.len())?;
        check_dim(dim, scale_weights.len())?;
        if weights.iter().chain(&scale_weights).any(|v| !v.is_finite()) || !scale_bias.is_finite() {
            return Err(Error::Validation("head parameters must be finite".into()));
        }
        let head = CosineHead {
            classes,
            dim,
            weights,
            scale_weights,
            scale_bias,
        };
        if let Some(c) = (0..classes).find(|&c| norm(head.class_weights(c)) == 0.0) {
            return Err(Error::Validation(format!("class weight row {c} is zero")));
        }
        Ok(head)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn scale_weights(&self) -> &[f64] {
        &self.scale_weights
    }

    pub fn scale_bias(&self) -> f64 {
        self.scale_bias
    }

    pub fn class_weights(&self, c: usize) -> &[f64] {
        &self.weights[c * self.dim..(c + 1) * self.dim]
    }

    pub(crate) fn params_mut(&mut self) -> (&mut [f64], &mut [f64], &mut f64) {
        (&mut self.weights, &mut self.scale_weights, &mut self.scale_bias)
    }

    fn scale_preactivation(&self, x: &[f64]) -> f64 {
        dot(&self.scale_weights, x) + self.scale_bias
    }

    /// Predicted inverse temperature, always greater than 1.
    pub fn scale(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        Ok(softplus(self.scale_preactivation(x)) + 1.0)
    }

    /// Cosine between `x` and each class weight vector.
    pub fn cosine_similarities(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        let xn = norm(x);
        if xn == 0.0 {
            return Err(Error::Domain("cosine similarity of a zero-norm input".into()));
        }
        Ok((0..self.classes)
            .map(|c| {
                let w = self.class_weights(c);
                (dot(x, w) / (xn * norm(w))).clamp(-1.0, 1.0)
            })
            .collect())
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        let cos = self.cosine_similarities(x)?;
        let s = softplus(self.scale_preactivation(x)) + 1.0;
        Ok(cos.into_iter().map(|c| s * c).collect())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(x)?))
    }
}

/// Either head kind, behind one interface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Head {
    Linear(LinearHead),
    Cosine(CosineHead),
}

/// Gradient of the log max-probability with respect to the input.
#[derive(Debug, Clone, PartialEq)]
pub struct InputGradient {
    pub gradient: Vec<f64>,
    /// Class whose probability was differentiated.
    pub class: usize,
    /// True when another class shared the maximum probability.
    pub tie: bool,
}

impl Head {
    pub fn kind(&self) -> HeadKind {
        match self {
            Head::Linear(_) => HeadKind::Linear,
            Head::Cosine(_) => HeadKind::Cosine,
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            Head::Linear(h) => h.classes,
            Head::Cosine(h) => h.classes,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Head::Linear(h) => h.dim,
            Head::Cosine(h) => h.dim,
        }
    }

    pub fn as_linear(&self) -> Option<&LinearHead> {
        match self {
            Head::Linear(h) => Some(h),
            Head::Cosine(_) => None,
        }
    }

    pub fn as_cosine(&self) -> Option<&CosineHead> {
        match self {
            Head::Cosine(h) => Some(h),
            Head::Linear(_) => None,
        }
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Head::Linear(h) => h.logits(x),
            Head::Cosine(h) => h.logits(x),
        }
    }

    /// Class probabilities. The linear head divides logits by `t`; the cosine
    /// head carries its own predicted scale and ignores `t`.
    pub fn forward(&self, x: &[f64], t: Temperature) -> Result<Vec<f64>> {
        match self {
            Head::Linear(h) => h.forward(x, t),
            Head::Cosine(h) => h.forward(x),
        }
    }

    /// Predicted class, lowest index on ties.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.logits(x)?).0)
    }

    /// `∇_x log max_c softmax_c(logits(x) / T)` in closed form.
    pub fn input_gradient_max_logprob(&self, x: &[f64], t: Temperature) -> Result<InputGradient> {
        match self {
            Head::Linear(h) => {
                let p = h.forward(x, t)?;
                let (k, tie) = argmax(&p);
                let inv_t = 1.0 / t.value();
                let mut g = h.class_weights(k).to_vec();
                for (c, &pc) in p.iter().enumerate() {
                    for (gi, wi) in g.iter_mut().zip(h.class_weights(c)) {
                        *gi -= pc * wi;
                    }
                }
                for gi in &mut g {
                    *gi *= inv_t;
                }
                Ok(InputGradient {
                    gradient: g,
                    class: k,
                    tie,
                })
            }
            Head::Cosine(h) => {
                let cos = h.cosine_similarities(x)?;
                let z = h.scale_preactivation(x);
                let s = softplus(z) + 1.0;
                let logits: Vec<f64> = cos.iter().map(|c| s * c).collect();
                let p = softmax(&logits);
                let (k, tie) = argmax(&p);
                let xn = norm(x);
                // g_c = d log p_k / d logit_c
                let g: Vec<f64> = p
                    .iter()
                    .enumerate()
                    .map(|(c, &pc)| if c == k { 1.0 - pc } else { -pc })
                    .collect();
                let mut grad = vec![0.0; h.dim];
                let mut cos_term = 0.0;
                for c in 0..h.classes {
                    let w = h.class_weights(c);
                    let wn = norm(w);
                    let coef = s * g[c] / xn;
                    for ((gi, wi), xi) in grad.iter_mut().zip(w).zip(x) {
                        *gi += coef * (wi / wn - cos[c] * xi / xn);
                    }
                    cos_term += g[c] * cos[c];
                }
                let ds = cos_term * sigmoid(z);
                for (gi, ws) in grad.iter_mut().zip(&h.scale_weights) {
                    *gi += ds * ws;
                }
                Ok(InputGradient {
                    gradient: grad,
                    class: k,
                    tie,
                })
            }
        }
    }
}

impl From<LinearHead> for Head {
    fn from(h: LinearHead) -> Self {
        Head::Linear(h)
    }
}

impl From<CosineHead> for Head {
    fn from(h: CosineHead) -> Self {
        Head::Cosine(h)
    }
}

fn softmax_at(logits: &[f64], t: Temperature) -> Vec<f64> {
    if t.value() == 1.0 {
        softmax(logits)
    } else {
        let scaled: Vec<f64> = logits.iter().map(|z| z / t.value()).collect();
        softmax(&scaled)
    }
}
