use super::{Head, Temperature};
use crate::data::DatasetBundle;
use crate::error::{check_dim, Error, Result};
use crate::math::log_sum_exp;

const LN_BETA_MIN: f64 = -9.210_340_371_976_182; // ln 1e-4
const LN_BETA_MAX: f64 = 4.605_170_185_988_092; // ln 1e2

/// Mean negative log-likelihood of `labels` under `softmax(logits / t)`.
pub fn nll(logits: &[Vec<f64>], labels: &[usize], t: f64) -> f64 {
    let beta = 1.0 / t;
    nll_beta(logits, labels, beta)
}

fn nll_beta(logits: &[Vec<f64>], labels: &[usize], beta: f64) -> f64 {
    let total: f64 = logits
        .iter()
        .zip(labels)
        .map(|(z, &y)| {
            let scaled: Vec<f64> = z.iter().map(|v| v * beta).collect();
            log_sum_exp(&scaled) - scaled[y]
        })
        .sum();
    total / logits.len() as f64
}

/// Temperature minimizing validation NLL for a fixed set of logits.
///
/// NLL is convex in the inverse temperature, so a golden-section search over
/// `ln(1/T)` finds the global minimum in the bracket `T ∈ [0.01, 10⁴]`.
/// When the minimum sits on the bracket edge (for example on a perfectly
/// classified validation set, where NLL keeps falling as `T → 0`) there is
/// no finite minimizer, so `T = 1` is kept with a warning.
pub fn fit_temperature_logits(logits: &[Vec<f64>], labels: &[usize]) -> Result<Temperature> {
    if logits.is_empty() {
        return Err(Error::precondition(
            "temperature fitting needs a nonempty validation set",
        ));
    }
    check_dim(logits.len(), labels.len())?;
    let mut distinct = labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        log::warn!("validation set holds a single class; keeping T = 1");
        return Ok(Temperature::ONE);
    }
    let f = |u: f64| nll_beta(logits, labels, u.exp());
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (LN_BETA_MIN, LN_BETA_MAX);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
        if b - a < 1e-12 {
            break;
        }
    }
    let u = 0.5 * (a + b);
    let edge = 1e-6 * (LN_BETA_MAX - LN_BETA_MIN);
    if u <= LN_BETA_MIN + edge || u >= LN_BETA_MAX - edge {
        log::warn!("validation NLL has no interior minimum; keeping T = 1");
        return Ok(Temperature::ONE);
    }
    let t = 1.0 / u.exp();
    if nll_beta(logits, labels, 1.0) <= f(u) {
        return Ok(Temperature::ONE);
    }
    Temperature::new(t)
}

/// Fits the softmax temperature of a linear head on labeled validation data.
/// The cosine head predicts its own scale, so it always gets `T = 1`.
pub fn fit_temperature(head: &Head, val: &DatasetBundle) -> Result<Temperature> {
    let labels = val.labels()?;
    if val.is_empty() {
        return Err(Error::precondition(
            "temperature fitting needs a nonempty validation set",
        ));
    }
    check_dim(head.dim(), val.dim())?;
    let linear = match head {
        Head::Linear(h) => h,
        Head::Cosine(_) => return Ok(Temperature::ONE),
    };
    let logits: Vec<Vec<f64>> = (0..val.len())
        .map(|i| linear.logits_unchecked(&val.features.row_f64(i)))
        .collect();
    let ys: Vec<usize> = (0..val.len()).map(|i| labels.get(i)).collect();
    fit_temperature_logits(&logits, &ys)
}
