//! Two-layer MLP `f: S̄ → err̄` (1 → H → 1, tanh) fitted by full-batch Adam
//! on squared error with early stopping on validation MAE.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::ShiftPair;
use crate::error::{Error, Result};
use crate::math::{mean, rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressorConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub max_iter: usize,
    /// Stop after this many iterations without a validation MAE improvement.
    pub patience: usize,
    pub seed: u64,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        RegressorConfig {
            hidden: 16,
            learning_rate: 0.01,
            max_iter: 3000,
            patience: 300,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regressor {
    net: Params,
    x_mean: f64,
    x_std: f64,
    y_mean: f64,
    y_std: f64,
    /// Set when training fell back to a constant predictor.
    pub constant: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Params {
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
}

impl Params {
    fn flat_len(&self) -> usize {
        3 * self.w1.len() + 1
    }

    fn forward(&self, x: f64) -> f64 {
        self.b2
            + self
                .w1
                .iter()
                .zip(&self.b1)
                .zip(&self.w2)
                .map(|((w, b), v)| v * (w * x + b).tanh())
                .sum::<f64>()
    }

    /// Gradient of the mean squared error, laid out as [w1, b1, w2, b2].
    fn gradient(&self, xs: &[f64], ys: &[f64]) -> Vec<f64> {
        let h = self.w1.len();
        let mut g = vec![0.0; self.flat_len()];
        let n = xs.len() as f64;
        for (&x, &y) in xs.iter().zip(ys) {
            let act: Vec<f64> = (0..h).map(|j| (self.w1[j] * x + self.b1[j]).tanh()).collect();
            let o = self.b2 + act.iter().zip(&self.w2).map(|(a, v)| a * v).sum::<f64>();
            let e = 2.0 * (o - y) / n;
            for j in 0..h {
                let da = e * self.w2[j] * (1.0 - act[j] * act[j]);
                g[j] += da * x;
                g[h + j] += da;
                g[2 * h + j] += e * act[j];
            }
            g[3 * h] += e;
        }
        g
    }

    fn apply(&mut self, step: &[f64]) {
        let h = self.w1.len();
        for j in 0..h {
            self.w1[j] -= step[j];
            self.b1[j] -= step[h + j];
            self.w2[j] -= step[2 * h + j];
        }
        self.b2 -= step[3 * h];
    }
}

impl Regressor {
    fn constant_predictor(value: f64) -> Self {
        Regressor {
            net: Params {
                w1: Vec::new(),
                b1: Vec::new(),
                w2: Vec::new(),
                b2: 0.0,
            },
            x_mean: 0.0,
            x_std: 1.0,
            y_mean: value,
            y_std: 1.0,
            constant: Some(value.clamp(0.0, 100.0)),
        }
    }

    fn raw(&self, s_bar: f64) -> f64 {
        if let Some(c) = self.constant {
            return c;
        }
        self.y_mean + self.y_std * self.net.forward((s_bar - self.x_mean) / self.x_std)
    }

    /// Predicted classification error in percent, clamped to [0, 100].
    pub fn predict_error(&self, s_bar: f64) -> Result<f64> {
        if !s_bar.is_finite() {
            return Err(Error::Domain(format!("mean score must be finite, got {s_bar}")));
        }
        Ok(self.raw(s_bar).clamp(0.0, 100.0))
    }

    pub fn hidden(&self) -> usize {
        self.net.w1.len()
    }
}

fn mae_of(p: &Params, xs: &[f64], ys: &[f64], y_mean: f64, y_std: f64) -> f64 {
    xs.iter()
        .zip(ys)
        .map(|(&x, &y)| ((y_mean + y_std * p.forward(x)).clamp(0.0, 100.0) - y).abs())
        .sum::<f64>()
        / xs.len() as f64
}

/// Fits `f` on `train`; `val` drives early stopping (the training pairs are
/// used instead when `val` is empty).
pub fn train_regressor(train: &[ShiftPair], val: &[ShiftPair], cfg: &RegressorConfig) -> Result<Regressor> {
    if train.len() + val.len() < 3 {
        return Err(Error::precondition("the regressor needs at least 3 pairs"));
    }
    if train.is_empty() {
        return Err(Error::precondition("the regressor needs training pairs"));
    }
    if cfg.hidden == 0 || !(cfg.learning_rate > 0.0) {
        return Err(Error::precondition(
            "regressor needs hidden >= 1 and a positive learning rate",
        ));
    }
    let xs_raw: Vec<f64> = train.iter().map(|p| p.s_bar).collect();
    let ys_raw: Vec<f64> = train.iter().map(|p| p.err_bar).collect();
    if xs_raw.iter().chain(&ys_raw).any(|v| !v.is_finite()) {
        return Err(Error::Domain("training pairs must be finite".into()));
    }
    let x_mean = mean(&xs_raw);
    let x_std = (xs_raw.iter().map(|x| (x - x_mean).powi(2)).sum::<f64>() / xs_raw.len() as f64).sqrt();
    let y_mean = mean(&ys_raw);
    if !(x_std > 1e-12 * x_mean.abs().max(1.0)) {
        log::warn!("all training mean scores are identical; using a constant error predictor");
        return Ok(Regressor::constant_predictor(y_mean));
    }
    let y_sd = (ys_raw.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / ys_raw.len() as f64).sqrt();
    let y_std = if y_sd > 1e-12 { y_sd } else { 1.0 };

    let xs: Vec<f64> = xs_raw.iter().map(|x| (x - x_mean) / x_std).collect();
    let ys: Vec<f64> = ys_raw.iter().map(|y| (y - y_mean) / y_std).collect();
    let (vx, vy): (Vec<f64>, Vec<f64>) = if val.is_empty() {
        (xs.clone(), ys_raw.clone())
    } else {
        val.iter().map(|p| ((p.s_bar - x_mean) / x_std, p.err_bar)).unzip()
    };

    let h = cfg.hidden;
    let mut r = rng(cfg.seed);
    let mut params = Params {
        w1: (0..h).map(|_| r.sample(StandardNormal)).collect(),
        b1: (0..h).map(|_| 0.5 * r.sample::<f64, _>(StandardNormal)).collect(),
        w2: (0..h)
            .map(|_| r.sample::<f64, _>(StandardNormal) / (h as f64).sqrt())
            .collect(),
        b2: 0.0,
    };
    let (beta1, beta2, eps) = (0.9, 0.999, 1e-8);
    let mut m = vec![0.0; params.flat_len()];
    let mut v = vec![0.0; params.flat_len()];
    let mut best = params.clone();
    let mut best_mae = mae_of(&params, &vx, &vy, y_mean, y_std);
    let mut since_best = 0;
    for it in 1..=cfg.max_iter {
        let g = params.gradient(&xs, &ys);
        let c1 = 1.0 - pow_n(beta1, it);
        let c2 = 1.0 - pow_n(beta2, it);
        let step: Vec<f64> = g
            .iter()
            .enumerate()
            .map(|(i, gi)| {
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                cfg.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + eps)
            })
            .collect();
        params.apply(&step);
        let mae = mae_of(&params, &vx, &vy, y_mean, y_std);
        if !mae.is_finite() {
            return Err(Error::Training {
                epoch: it,
                reason: "regressor diverged".into(),
            });
        }
        if mae < best_mae {
            best_mae = mae;
            best = params.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    Ok(Regressor {
        net: best,
        x_mean,
        x_std,
        y_mean,
        y_std,
        constant: None,
    })
}

fn pow_n(beta: f64, t: usize) -> f64 {
    beta.powi(t.min(i32::MAX as usize) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_pairs(n: usize, offset: f64) -> Vec<ShiftPair> {
        (0..n)
            .map(|i| {
                let s = (i as f64 + offset) / n as f64;
                ShiftPair::new(s, 50.0 * s + 10.0, None)
            })
            .collect()
    }

    #[test]
    fn fits_a_line_on_held_out_points() {
        let train = line_pairs(20, 0.0);
        let val = line_pairs(10, 0.5);
        let f = train_regressor(&train, &val, &RegressorConfig::default()).unwrap();
        let test = line_pairs(37, 0.25);
        let mae = test
            .iter()
            .map(|p| (f.predict_error(p.s_bar).unwrap() - p.err_bar).abs())
            .sum::<f64>()
            / test.len() as f64;
        assert!(mae <= 1.0, "mae {mae}");
    }

    #[test]
    fn monotone_over_the_training_range() {
        let f = train_regressor(&line_pairs(20, 0.0), &line_pairs(10, 0.5), &RegressorConfig::default()).unwrap();
        let mut prev = f.predict_error(0.0).unwrap();
        for i in 1..=100 {
            let cur = f.predict_error(i as f64 / 100.0).unwrap();
            assert!(cur >= prev - 1.0, "{cur} after {prev}");
            prev = cur;
        }
    }

    #[test]
    fn too_few_pairs() {
        assert!(train_regressor(&line_pairs(2, 0.0), &[], &RegressorConfig::default()).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = RegressorConfig::default();
        let a = train_regressor(&line_pairs(20, 0.0), &line_pairs(10, 0.5), &cfg).unwrap();
        let b = train_regressor(&line_pairs(20, 0.0), &line_pairs(10, 0.5), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identical_scores_fall_back_to_a_constant() {
        let pairs: Vec<ShiftPair> = (0..5).map(|i| ShiftPair::new(0.3, 10.0 + i as f64, None)).collect();
        let f = train_regressor(&pairs, &[], &RegressorConfig::default()).unwrap();
        assert_eq!(f.constant, Some(12.0));
        assert_eq!(f.predict_error(-50.0).unwrap(), 12.0);
        assert_eq!(f.predict_error(7.0).unwrap(), 12.0);
    }

    #[test]
    fn output_is_clamped_and_input_checked() {
        let f = train_regressor(&line_pairs(20, 0.0), &[], &RegressorConfig::default()).unwrap();
        for s in [-1e12, -1e6, 1e6, 1e12] {
            assert!((0.0..=100.0).contains(&f.predict_error(s).unwrap()));
        }
        assert!(f.predict_error(f64::NAN).is_err());
    }
}
