//! Proxy-A-distance style dataset score from a source-vs-target classifier.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::logistic::{fit_logistic, LogisticConfig, LogisticModel};
use crate::data::FeatureMatrix;
use crate::error::{check_dim, Error, Result};
use crate::math::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PadModel {
    pub classifier: LogisticModel,
    /// Mean |p(target) − domain label| over held-out rows of both sets.
    pub mae: f64,
    /// `1 − mae`, in [0, 1].
    pub score: f64,
}

fn split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng(seed));
    let k = ((n as f64 * fraction).round() as usize).clamp(1, n - 1);
    let held = idx.split_off(k);
    (idx, held)
}

/// Trains a logistic domain classifier on the `split` fraction of each set
/// and scores it on the rest. Source is label 0, target label 1.
pub fn pad_fit_and_score(
    source: &FeatureMatrix,
    target: &FeatureMatrix,
    split_fraction: f64,
    seed: u64,
) -> Result<PadModel> {
    check_dim(source.d(), target.d())?;
    if source.n() < 2 || target.n() < 2 {
        return Err(Error::precondition("PAD needs at least 2 samples on each side"));
    }
    if !(split_fraction > 0.0 && split_fraction < 1.0) {
        return Err(Error::precondition("PAD split fraction must lie in (0, 1)"));
    }
    let (s_fit, s_held) = split(source.n(), split_fraction, seed);
    let (t_fit, t_held) = split(target.n(), split_fraction, seed.wrapping_add(0x9E37_79B9_7F4A_7C15));

    let mut x = Vec::with_capacity(s_fit.len() + t_fit.len());
    let mut y = Vec::with_capacity(x.capacity());
    for &i in &s_fit {
        x.push(source.row_f64(i));
        y.push(false);
    }
    for &i in &t_fit {
        x.push(target.row_f64(i));
        y.push(true);
    }
    let classifier = fit_logistic(&x, &y, &LogisticConfig::default())?;

    let mut abs_err = 0.0;
    for &i in &s_held {
        abs_err += classifier.predict_proba(&source.row_f64(i));
    }
    for &i in &t_held {
        abs_err += 1.0 - classifier.predict_proba(&target.row_f64(i));
    }
    let mae = abs_err / (s_held.len() + t_held.len()) as f64;
    Ok(PadModel {
        classifier,
        mae,
        score: (1.0 - mae).clamp(0.0, 1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn cloud(n: usize, d: usize, shift: f64, seed: u64) -> FeatureMatrix {
        let mut r = rng(seed);
        let vals = (0..n * d)
            .map(|j| (r.sample::<f64, _>(StandardNormal) + if j % d == 0 { shift } else { 0.0 }) as f32)
            .collect();
        FeatureMatrix::new(n, d, vals).unwrap()
    }

    #[test]
    fn same_distribution_is_near_chance() {
        let a = cloud(10_000, 4, 0.0, 1);
        let b = cloud(10_000, 4, 0.0, 2);
        let pad = pad_fit_and_score(&a, &b, 0.5, 3).unwrap();
        assert!((0.40..=0.60).contains(&pad.score), "S = {}", pad.score);
    }

    #[test]
    fn far_clusters_score_high() {
        let a = cloud(1000, 4, 0.0, 1);
        let b = cloud(1000, 4, 20.0, 2);
        let pad = pad_fit_and_score(&a, &b, 0.5, 3).unwrap();
        assert!(pad.score >= 0.95, "S = {}", pad.score);
    }

    #[test]
    fn deterministic_per_seed() {
        let a = cloud(200, 3, 0.0, 1);
        let b = cloud(200, 3, 1.0, 2);
        assert_eq!(
            pad_fit_and_score(&a, &b, 0.5, 9).unwrap(),
            pad_fit_and_score(&a, &b, 0.5, 9).unwrap()
        );
    }

    #[test]
    fn tiny_sides_are_rejected() {
        let a = cloud(1, 2, 0.0, 1);
        let b = cloud(10, 2, 0.0, 2);
        assert!(pad_fit_and_score(&a, &b, 0.5, 0).is_err());
        assert!(pad_fit_and_score(&b, &a, 0.5, 0).is_err());
    }
}
