//! Small dense-vector helpers shared by the heads and scorers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mixes a base seed with a stream id (splitmix64 finalizer) so that derived
/// generators are decorrelated from each other and from the base seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Index of the largest entry; ties resolve to the lowest index. Returns
/// `(index, tied)` where `tied` reports whether another entry equals the max.
pub fn argmax(v: &[f64]) -> (usize, bool) {
    let mut best = 0;
    let mut tied = false;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
            tied = false;
        } else if x == v[best] {
            tied = true;
        }
    }
    (best, tied)
}

pub fn max(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = max(logits);
    let mut out: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = out.iter().sum();
    for p in &mut out {
        *p /= s;
    }
    out
}

pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let m = max(logits);
    m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln()
}

/// `ln(1 + e^z)` without overflow.
#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else if z < -30.0 {
        z.exp()
    } else {
        z.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (n − 1); zero for fewer than two values.
pub fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    let ss: f64 = v.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (v.len() - 1) as f64).sqrt()
}

/// Standard-normal vector of length `d`.
pub(crate) fn gaussian_vec<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(rand_distr::StandardNormal)).collect()
}

pub(crate) fn to_f64(row: &[f32]) -> Vec<f64> {
    row.iter().map(|&v| v as f64).collect()
}
