// SPDX-License-Identifier: MIT OR Apache-2.0

#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use probekit_core::Matrix;
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

/// Random `k x d` matrix with orthonormal rows.
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

/// Standard-normal CDF.
pub fn phi(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Runs the `probekit` binary in `dir` with one worker thread.
pub fn probekit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_probekit"))
        .args(args)
        .current_dir(dir)
        .env("PROBEKIT_THREADS", "1")
        .output()
        .expect("spawn probekit")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Runs and asserts exit 0.
pub fn ok(dir: &Path, args: &[&str]) -> Output {
    let o = probekit(dir, args);
    assert_eq!(
        o.status.code(),
        Some(0),
        "probekit {args:?}: {}",
        stderr(&o)
    );
    o
}
