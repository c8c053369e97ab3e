//! Small numeric helpers over probability rows.

use alloc::vec::Vec;
use rand::Rng;

/// Softmax of a logits row, shifted by the max for stability.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| libm::exp(l - m)).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|&l| libm::exp(l - m)).sum();
    let lz = m + libm::log(z);
    logits.iter().map(|&l| l - lz).collect()
}

/// Shannon entropy in nats, `0 log 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| x * libm::log(x))
        .sum::<f64>()
}

/// Forward KL(p || q) in nats. `0 log(0/q) = 0`; `p > 0, q = 0` gives `+inf`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi <= 0.0 {
            continue;
        }
        if qi <= 0.0 {
            return f64::INFINITY;
        }
        acc += pi * (libm::log(pi) - libm::log(qi));
    }
    // rounding can leave a tiny negative value when p == q
    acc.max(0.0)
}

/// Draw an index from a probability row by inverting the cumulative sum.
pub fn sample_categorical<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// Check that `row` is a point of the probability simplex within `tol`.
pub fn is_simplex(row: &[f64], tol: f64) -> bool {
    !row.is_empty()
        && row.iter().all(|&x| x.is_finite() && x >= 0.0)
        && libm::fabs(row.iter().sum::<f64>() - 1.0) <= tol
}

/// Indices attaining the maximum (exact comparison, full tied set).
pub fn argmax_set(row: &[f64]) -> Vec<usize> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    row.iter()
        .enumerate()
        .filter(|(_, &x)| x == m)
        .map(|(i, _)| i)
        .collect()
}

pub fn sup_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| libm::fabs(x - y))
        .fold(0.0, f64::max)
}
