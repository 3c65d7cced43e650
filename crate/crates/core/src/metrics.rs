//! AUROC for detection, MAE/RMSE for error prediction, and classification error.

use serde::{Deserialize, Serialize};

use crate::data::DatasetBundle;
use crate::error::{check_dim, Error, Result};
use crate::head::Head;

/// AUROC of one scorer on one ID/OOD pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub scorer: String,
    pub auroc: f64,
    pub n_id: usize,
    pub n_ood: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionErrors {
    pub mae: f64,
    pub rmse: f64,
}

/// Probability that a random ID sample scores above a random OOD sample,
/// counting ties as one half (the Mann–Whitney statistic normalized by
/// `n_id · n_ood`).
///
/// Computed from mid-ranks after one sort, so it costs `O(n log n)`. Both the
/// rank-sum numerator and the pairwise count are half-integers below 2⁵³, so
/// the result agrees with the quadratic pairwise definition to the last bit.
pub fn auroc(id_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    if id_scores.is_empty() || ood_scores.is_empty() {
        return Err(Error::UndefinedMetric(format!(
            "AUROC needs both sides nonempty (n_id = {}, n_ood = {})",
            id_scores.len(),
            ood_scores.len()
        )));
    }
    if id_scores.iter().chain(ood_scores).any(|s| !s.is_finite()) {
        return Err(Error::Validation("AUROC scores must be finite".into()));
    }
    let mut all: Vec<(f64, bool)> = id_scores
        .iter()
        .map(|&s| (s, true))
        .chain(ood_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Twice the rank sum of the ID group keeps everything integral.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j+1, mid-rank (i + j + 2) / 2
        let twice_mid = (i + j + 2) as u128;
        let id_in_group = all[i..=j].iter().filter(|e| e.1).count() as u128;
        twice_rank_sum += twice_mid * id_in_group;
        i = j + 1;
    }
    let n_id = id_scores.len() as u128;
    let n_ood = ood_scores.len() as u128;
    // 2U = 2R − n_id (n_id + 1)
    let twice_u = twice_rank_sum - n_id * (n_id + 1);
    Ok((twice_u as f64 / 2.0) / (n_id as f64 * n_ood as f64))
}

/// AUROC on score vectors, tagged with the scorer name.
pub fn detection_result(scorer: &str, id: &[f64], ood: &[f64]) -> Result<DetectionResult> {
    Ok(DetectionResult {
        scorer: scorer.to_string(),
        auroc: auroc(id, ood)?,
        n_id: id.len(),
        n_ood: ood.len(),
    })
}

/// MAE and RMSE between predicted and true error percentages.
pub fn regression_errors(predicted: &[f64], truth: &[f64]) -> Result<RegressionErrors> {
    check_dim(truth.len(), predicted.len())?;
    if truth.is_empty() {
        return Err(Error::precondition("regression errors need at least one pair"));
    }
    let n = truth.len() as f64;
    let (abs, sq) = predicted.iter().zip(truth).fold((0.0, 0.0), |(a, s), (p, t)| {
        let d = p - t;
        (a + d.abs(), s + d * d)
    });
    let mae = abs / n;
    // Rounding can leave sqrt(mean Δ²) a hair below mean |Δ| when all |Δ| are equal.
    let rmse = (sq / n).sqrt().max(mae);
    Ok(RegressionErrors { mae, rmse })
}

fn mid_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j + 2) as f64 / 2.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson correlation of mid-ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_dim(x.len(), y.len())?;
    if x.len() < 2 {
        return Err(Error::UndefinedMetric(
            "rank correlation needs at least 2 points".into(),
        ));
    }
    let (rx, ry) = (mid_ranks(x), mid_ranks(y));
    let m = (x.len() + 1) as f64 / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - m) * (b - m);
        sxx += (a - m) * (a - m);
        syy += (b - m) * (b - m);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedMetric("rank correlation of a constant sequence".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Misclassification rate of `head` on a labeled bundle, in percent.
pub fn classification_error(head: &Head, bundle: &DatasetBundle) -> Result<f64> {
    let labels = bundle.labels()?;
    check_dim(head.dim(), bundle.dim())?;
    if bundle.is_empty() {
        return Err(Error::precondition("classification error of an empty bundle"));
    }
    let mut wrong = 0usize;
    for i in 0..bundle.len() {
        if head.predict(&bundle.features.row_f64(i))? != labels.get(i) {
            wrong += 1;
        }
    }
    Ok(100.0 * wrong as f64 / bundle.len() as f64)
}
