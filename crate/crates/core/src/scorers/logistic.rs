//! L2-regularized binary logistic regression fitted by damped Newton steps.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::math::{dot, sigmoid, softplus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    /// Ridge on the coefficients (not the intercept), on the mean-loss scale.
    pub l2: f64,
    pub max_iter: usize,
    pub tol: f64,
    /// Standardize features with the training mean and std before fitting.
    pub standardize: bool,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            l2: 1e-3,
            max_iter: 100,
            tol: 1e-10,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    mean: Vec<f64>,
    scale: Vec<f64>,
    coef: Vec<f64>,
    intercept: f64,
    pub converged: bool,
}

impl LogisticModel {
    fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.coef, &self.transform(x)) + self.intercept
    }

    /// Probability of the positive class.
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.decision(x))
    }

    /// Coefficients in the original (unstandardized) feature space.
    pub fn raw_coefficients(&self) -> Vec<f64> {
        self.coef.iter().zip(&self.scale).map(|(c, s)| c / s).collect()
    }

    pub fn raw_intercept(&self) -> f64 {
        self.intercept
            - self
                .coef
                .iter()
                .zip(&self.mean)
                .zip(&self.scale)
                .map(|((c, m), s)| c * m / s)
                .sum::<f64>()
    }
}

fn objective(z: &[Vec<f64>], y: &[bool], w: &[f64], b: f64, l2: f64) -> f64 {
    let n = z.len() as f64;
    let loss: f64 = z
        .iter()
        .zip(y)
        .map(|(x, &yi)| {
            let s = dot(w, x) + b;
            softplus(s) - if yi { s } else { 0.0 }
        })
        .sum();
    loss / n + 0.5 * l2 * dot(w, w)
}

pub fn fit_logistic(x: &[Vec<f64>], y: &[bool], cfg: &LogisticConfig) -> Result<LogisticModel> {
    check_dim(x.len(), y.len())?;
    if x.is_empty() {
        return Err(Error::precondition("logistic regression needs samples"));
    }
    let d = x[0].len();
    if let Some(r) = x.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: r.len(),
        });
    }
    let n = x.len() as f64;
    let (mean, scale) = if cfg.standardize {
        let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let scale: Vec<f64> = (0..d)
            .map(|j| {
                let v = x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if v > 0.0 {
                    v.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        (mean, scale)
    } else {
        (vec![0.0; d], vec![1.0; d])
    };
    let z: Vec<Vec<f64>> = x
        .iter()
        .map(|r| r.iter().zip(&mean).zip(&scale).map(|((v, m), s)| (v - m) / s).collect())
        .collect();

    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut f = objective(&z, y, &w, b, cfg.l2);
    let mut converged = false;
    for _ in 0..cfg.max_iter {
        // Gradient and Hessian over (w, b).
        let mut g = DVector::<f64>::zeros(d + 1);
        let mut h = DMatrix::<f64>::zeros(d + 1, d + 1);
        for (xi, &yi) in z.iter().zip(y) {
            let p = sigmoid(dot(&w, xi) + b);
            let e = p - if yi { 1.0 } else { 0.0 };
            let wgt = p * (1.0 - p);
            for j in 0..d {
                g[j] += e * xi[j];
                for k in 0..=j {
                    h[(j, k)] += wgt * xi[j] * xi[k];
                }
                h[(d, j)] += wgt * xi[j];
            }
            g[d] += e;
            h[(d, d)] += wgt;
        }
        for j in 0..=d {
            for k in 0..j {
                h[(k, j)] = h[(j, k)];
            }
        }
        g /= n;
        h /= n;
        for j in 0..d {
            g[j] += cfg.l2 * w[j];
            h[(j, j)] += cfg.l2;
        }
        h[(d, d)] += 1e-12;
        if g.norm() < cfg.tol {
            converged = true;
            break;
        }
        let step = match h.clone().cholesky() {
            Some(ch) => ch.solve(&g),
            None => h.lu().solve(&g).ok_or_else(|| Error::Training {
                epoch: 0,
                reason: "singular Hessian in logistic fit".into(),
            })?,
        };
        // Backtracking line search on the objective.
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..50 {
            let nw: Vec<f64> = w.iter().zip(step.iter()).map(|(wi, si)| wi - t * si).collect();
            let nb = b - t * step[d];
            let nf = objective(&z, y, &nw, nb, cfg.l2);
            if nf.is_finite() && nf <= f {
                let delta = f - nf;
                w = nw;
                b = nb;
                f = nf;
                improved = true;
                if delta < cfg.tol * f.abs().max(1.0) {
                    converged = true;
                }
                break;
            }
            t *= 0.5;
        }
        if !improved || converged {
            converged = true;
            break;
        }
    }
    if !f.is_finite() || w.iter().any(|v| !v.is_finite()) || !b.is_finite() {
        return Err(Error::Training {
            epoch: 0,
            reason: "logistic regression diverged".into(),
        });
    }
    Ok(LogisticModel {
        mean,
        scale,
        coef: w,
        intercept: b,
        converged,
    })
}
