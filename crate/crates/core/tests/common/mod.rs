// SPDX-License-Identifier: MIT OR Apache-2.0

#![allow(dead_code)]

use probekit_core::{LabeledMatrix, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, gaussian_vec(rng, rows * cols)).unwrap()
}

pub fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

/// Random `k x d` matrix with orthonormal rows (Gram-Schmidt of Gaussians).
pub fn random_orthonormal(rng: &mut ChaCha8Rng, k: usize, d: usize) -> Matrix {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(k);
    while rows.len() < k {
        let mut v = gaussian_vec(rng, d);
        for _ in 0..2 {
            for r in &rows {
                let c: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(r).for_each(|(a, b)| *a -= c * b);
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            rows.push(v.iter().map(|x| x / n).collect());
        }
    }
    Matrix::from_rows(&rows).unwrap()
}

/// Two isotropic Gaussian classes, `n_per_class` rows each, means
/// `+delta/2` (rhetorical) and `-delta/2`.
pub fn two_gaussians(
    rng: &mut ChaCha8Rng,
    delta: &[f64],
    sigma: f64,
    n_per_class: usize,
) -> LabeledMatrix {
    let d = delta.len();
    let mut data = Vec::with_capacity(2 * n_per_class * d);
    let mut y = Vec::with_capacity(2 * n_per_class);
    for i in 0..2 * n_per_class {
        let pos = i % 2 == 0;
        let sign = if pos { 0.5 } else { -0.5 };
        for &dj in delta {
            data.push(sign * dj + sigma * rng.sample::<f64, _>(StandardNormal));
        }
        y.push(pos);
    }
    let ids = (0..y.len()).map(|i| format!("x{i:05}")).collect();
    LabeledMatrix::new(Matrix::from_vec(y.len(), d, data).unwrap(), y, ids).unwrap()
}

/// Standard-normal CDF.
pub fn phi(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}
