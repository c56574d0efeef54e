//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use hypstab_core::HyperbolicSystem;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn speeds(rng: &mut impl Rng, k: usize) -> Vec<f64> {
    let mut s = vec![rng.gen_range(0.5..1.5)];
    for _ in 1..k {
        let last = *s.last().unwrap();
        s.push(last + rng.gen_range(0.3..1.2));
    }
    s
}

/// A valid system with n, m ≤ 3, strictly increasing speeds and couplings in
/// (−1, 1); boundary matrices are halved.
pub fn random_system(seed: u64) -> HyperbolicSystem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=3);
    let m = rng.gen_range(1..=3);
    let mat = |r: usize, c: usize, rng: &mut ChaCha8Rng| DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0));
    let lambda = speeds(&mut rng, n);
    let mu = speeds(&mut rng, m);
    HyperbolicSystem {
        lambda,
        mu,
        sigma_pp: mat(n, n, &mut rng),
        sigma_pm: mat(n, m, &mut rng),
        sigma_mp: mat(m, n, &mut rng),
        sigma_mm: mat(m, m, &mut rng),
        q0: mat(n, m, &mut rng) * 0.5,
        r1: mat(m, n, &mut rng) * 0.5,
    }
}

/// A smooth profile on `xs`: a few random Fourier modes plus a quadratic.
pub fn smooth_profile(rng: &mut impl Rng, xs: &[f64]) -> Vec<f64> {
    let modes: Vec<(f64, f64, f64)> = (1..=3)
        .map(|k| (k as f64, rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    let q = rng.gen_range(-1.0..1.0);
    xs.iter()
        .map(|&x| {
            let pi = std::f64::consts::PI;
            modes.iter().map(|&(k, a, b)| a * (k * pi * x).sin() + b * (k * pi * x).cos()).sum::<f64>() + q * x * x
        })
        .collect()
}

pub fn sup_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .fold(0.0, |m: f64, (x, y)| m.max((x - y).abs()))
}

pub fn sup(a: &[Vec<f64>]) -> f64 {
    a.iter().flatten().fold(0.0, |m: f64, x| m.max(x.abs()))
}
