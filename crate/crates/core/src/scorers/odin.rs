//! Input-perturbation scoring with a high fixed temperature, with the
//! perturbation size chosen on in-distribution validation data only.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DatasetBundle;
use crate::error::{check_dim, Error, Result};
use crate::head::{Head, Temperature};
use crate::math::max;

/// Candidate perturbation sizes searched by [`tune_odin_epsilon`].
pub const DEFAULT_EPSILON_GRID: [f64; 10] = [0.0, 0.0005, 0.001, 0.0014, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdinConfig {
    pub epsilon: f64,
    pub temperature: Temperature,
    pub grid: Vec<f64>,
}

impl Default for OdinConfig {
    fn default() -> Self {
        OdinConfig {
            epsilon: 0.0,
            temperature: Temperature::ODIN,
            grid: DEFAULT_EPSILON_GRID.to_vec(),
        }
    }
}

impl OdinConfig {
    pub fn with_epsilon(epsilon: f64) -> Self {
        OdinConfig {
            epsilon,
            ..Default::default()
        }
    }
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::precondition("epsilon grid is empty"));
    }
    if grid.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
        return Err(Error::precondition(
            "epsilon grid values must be finite and nonnegative",
        ));
    }
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::precondition("epsilon grid must be sorted"));
    }
    Ok(())
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `x + ε · sgn(∇_x log max softmax(x / T))`; `sgn(0) = 0`.
pub fn perturb(head: &Head, x: &[f64], epsilon: f64, t: Temperature) -> Result<Vec<f64>> {
    let g = head.input_gradient_max_logprob(x, t)?;
    Ok(x.iter()
        .zip(&g.gradient)
        .map(|(xi, gi)| xi + epsilon * sign(*gi))
        .collect())
}

/// Max-softmax at the configured temperature after the perturbation step.
pub fn score_odin(head: &Head, x: &[f64], cfg: &OdinConfig) -> Result<f64> {
    if !(cfg.epsilon.is_finite() && cfg.epsilon >= 0.0) {
        return Err(Error::precondition(format!(
            "epsilon must be nonnegative, got {}",
            cfg.epsilon
        )));
    }
    let xp = perturb(head, x, cfg.epsilon, cfg.temperature)?;
    Ok(max(&head.forward(&xp, cfg.temperature)?))
}

/// Sum over validation rows of the perturbed max-softmax, for each grid value.
pub(crate) fn epsilon_objectives(
    head: &Head,
    id_val: &DatasetBundle,
    grid: &[f64],
    t: Temperature,
) -> Result<Vec<f64>> {
    check_dim(head.dim(), id_val.dim())?;
    let per_row: Vec<Vec<f64>> = (0..id_val.len())
        .into_par_iter()
        .map(|i| {
            let x = id_val.features.row_f64(i);
            let g = head.input_gradient_max_logprob(&x, t)?;
            grid.iter()
                .map(|&eps| {
                    let xp: Vec<f64> = x.iter().zip(&g.gradient).map(|(xi, gi)| xi + eps * sign(*gi)).collect();
                    Ok(max(&head.forward(&xp, t)?))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    // Sum in row order so the objective does not depend on thread scheduling.
    let mut totals = vec![0.0; grid.len()];
    for row in per_row {
        for (t, v) in totals.iter_mut().zip(row) {
            *t += v;
        }
    }
    Ok(totals)
}

/// Grid value maximizing the summed perturbed confidence over ID validation
/// samples at `T = 1000`. Ties go to the smallest ε.
pub fn tune_odin_epsilon(head: &Head, id_val: &DatasetBundle, grid: &[f64]) -> Result<f64> {
    validate_grid(grid)?;
    if id_val.is_empty() {
        return Err(Error::precondition("epsilon tuning needs ID validation samples"));
    }
    let totals = epsilon_objectives(head, id_val, grid, Temperature::ODIN)?;
    let mut best = 0;
    for (i, &v) in totals.iter().enumerate().skip(1) {
        if v > totals[best] {
            best = i;
        }
    }
    Ok(grid[best])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureMatrix, Role};
    use crate::head::LinearHead;
    use crate::scorers::score_calibrated;

    fn head() -> Head {
        Head::Linear(LinearHead::new(3, 2, vec![1.0, 0.5, -0.5, 1.0, 0.0, -1.0], vec![0.1, 0.0, -0.1]).unwrap())
    }

    fn val() -> DatasetBundle {
        let f = FeatureMatrix::new(4, 2, vec![1.0, 0.2, -0.3, 0.8, 0.5, -1.0, 2.0, 1.0]).unwrap();
        DatasetBundle::new(f, None, Role::Ood, None).unwrap()
    }

    #[test]
    fn zero_epsilon_equals_calibrated_at_1000() {
        let h = head();
        let x = [0.7, -0.2];
        assert_eq!(
            score_odin(&h, &x, &OdinConfig::with_epsilon(0.0)).unwrap(),
            score_calibrated(&h, &x, Temperature::ODIN).unwrap()
        );
    }

    #[test]
    fn zero_gradient_makes_epsilon_irrelevant() {
        let h = Head::Linear(LinearHead::zeros(3, 2).unwrap());
        let x = [0.7, -0.2];
        let base = score_odin(&h, &x, &OdinConfig::with_epsilon(0.0)).unwrap();
        for eps in [0.001, 0.1, 5.0] {
            assert_eq!(score_odin(&h, &x, &OdinConfig::with_epsilon(eps)).unwrap(), base);
        }
    }

    #[test]
    fn grid_of_zero_selects_zero() {
        assert_eq!(tune_odin_epsilon(&head(), &val(), &[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn larger_objective_wins() {
        // Along +sgn(δx) the confidence of a linear head grows, so 0.01 beats 0.
        let grid = [0.0, 0.01];
        let eps = tune_odin_epsilon(&head(), &val(), &grid).unwrap();
        let obj = epsilon_objectives(&head(), &val(), &grid, Temperature::ODIN).unwrap();
        assert!(obj[1] > obj[0]);
        // Independent re-evaluation through the public scorer.
        let v = val();
        let resum = |e: f64| -> f64 {
            (0..v.len())
                .map(|i| score_odin(&head(), &v.features.row_f64(i), &OdinConfig::with_epsilon(e)).unwrap())
                .sum()
        };
        assert!(resum(0.01) > resum(0.0));
        assert_eq!(eps, 0.01);
    }

    #[test]
    fn bad_grids_are_rejected() {
        assert!(tune_odin_epsilon(&head(), &val(), &[]).is_err());
        assert!(tune_odin_epsilon(&head(), &val(), &[0.1, 0.0]).is_err());
        assert!(tune_odin_epsilon(&head(), &val(), &[-0.1]).is_err());
    }

    #[test]
    fn ties_pick_smallest_epsilon() {
        let h = Head::Linear(LinearHead::zeros(3, 2).unwrap());
        assert_eq!(tune_odin_epsilon(&h, &val(), &[0.0, 0.01, 0.1]).unwrap(), 0.0);
    }
}
