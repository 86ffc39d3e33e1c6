//! Independent similarity-weighting oracle: plain loops over the textbook
//! definitions, no shared helpers with the library.

#![allow(dead_code)]

pub struct HandReport {
    pub similarity: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub valid: Vec<bool>,
    pub weights: Vec<f64>,
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for i in 0..a.len() {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    ab / (aa.sqrt() * bb.sqrt())
}

pub fn naive_gsc(grads: &[Vec<f64>], theta: f64, tau: f64) -> HandReport {
    let t = grads.len();
    let similarity: Vec<Vec<f64>> = (0..t)
        .map(|i| (0..t).map(|j| cos(&grads[i], &grads[j])).collect())
        .collect();
    let mean: Vec<f64> = similarity
        .iter()
        .map(|row| row.iter().sum::<f64>() / t as f64)
        .collect();
    let valid: Vec<bool> = mean.iter().map(|m| *m >= theta).collect();
    let top = (0..t)
        .filter(|&i| valid[i])
        .map(|i| mean[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let mut weights = vec![0.0; t];
    let mut z = 0.0;
    for i in 0..t {
        if valid[i] {
            weights[i] = ((mean[i] - top) / tau).exp();
            z += weights[i];
        }
    }
    for w in &mut weights {
        *w /= if z > 0.0 { z } else { 1.0 };
    }
    HandReport {
        similarity,
        mean,
        valid,
        weights,
    }
}

/// The three-operator case `(g, g, −g)` with θ = 0 evaluated by hand:
/// every pair is ±1, so row means are `(1 + 1 − 1) / 3` for the first two
/// operators and `(−1 − 1 + 1) / 3` for the third; the third is filtered and
/// the remaining two tie under the softmax.
pub fn three_operator_case() -> HandReport {
    let third = 1.0 / 3.0;
    HandReport {
        similarity: vec![
            vec![1.0, 1.0, -1.0],
            vec![1.0, 1.0, -1.0],
            vec![-1.0, -1.0, 1.0],
        ],
        mean: vec![third, third, -third],
        valid: vec![true, true, false],
        weights: vec![0.5, 0.5, 0.0],
    }
}
